// SPDX-License-Identifier: Apache-2.0
#pragma once

// Chat-completion client for a remote policy or judge endpoint.
// Link OpenSSL::SSL and OpenSSL::Crypto (HTTPS and base64).

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include "httplib.h"
#include "zoomrl/error.hpp"
#include "zoomrl/image_io.hpp"
#include "zoomrl/reward.hpp"
#include "zoomrl/rollout.hpp"
#include "zoomrl/trajectory.hpp"
#include "zoomrl/util.hpp"

namespace zoomrl {

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

struct EndpointConfig {
  std::string url = "http://127.0.0.1:8000/v1/chat/completions";
  std::string model = "policy";
  std::string api_key_env = "ZOOMRL_API_KEY";
  int timeout_ms = 60000;
  int max_retries = 3;
  int backoff_ms = 500;
  int backoff_cap_ms = 8000;
};

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/\s]+)(/[^\s]*)?$)", std::regex::icase);
  std::smatch m;
  if (!std::regex_match(url, m, re)) throw Error(Errc::ConfigError, "bad endpoint url \"" + url + "\"");
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

/// Request body in the chat-completion wire format. Observations travel as
/// user messages; images as base64 PNG data URIs.
inline json build_request_body(const StateView& view, const GenerationRequest& req, const std::string& model) {
  json messages = json::array();
  for (const auto& m : view.messages) {
    json content = json::array();
    for (const auto& p : m.content) {
      if (p.kind == ContentPart::Kind::Text) {
        content.push_back({{"type", "text"}, {"text", p.text}});
      } else {
        if (!p.image) throw Error(Errc::InvalidArgument, "image part \"" + p.image_ref + "\" has no pixels");
        content.push_back(
            {{"type", "image_url"}, {"image_url", {{"url", "data:image/png;base64," + base64_encode(encode_png(*p.image))}}}});
      }
    }
    const char* role = m.role == Role::System ? "system" : m.role == Role::Assistant ? "assistant" : "user";
    messages.push_back({{"role", role}, {"content", std::move(content)}});
  }
  json body = {{"model", model}, {"messages", std::move(messages)}, {"stop", req.stop}, {"temperature", req.temperature},
               {"seed", req.seed}};
  if (req.max_tokens > 0) body["max_tokens"] = req.max_tokens;
  return body;
}

inline Generation parse_completion(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(Errc::ProtocolError, "response is not a JSON object");
  const json* content = nullptr;
  if (auto ch = j.find("choices"); ch != j.end() && ch->is_array() && !ch->empty()) {
    const json& c0 = (*ch)[0];
    if (auto msg = c0.find("message"); msg != c0.end() && msg->is_object()) {
      if (auto ct = msg->find("content"); ct != msg->end() && ct->is_string()) content = &*ct;
    }
  }
  if (!content) throw Error(Errc::ProtocolError, "response lacks choices[0].message.content");
  Generation g;
  g.text = content->get<std::string>();
  if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
    if (auto ct = u->find("completion_tokens"); ct != u->end() && ct->is_number_integer() && ct->get<long long>() > 0)
      g.token_len = static_cast<std::size_t>(ct->get<long long>());
  }
  if (g.token_len == 0) {
    g.token_len = whitespace_token_estimate(g.text);
    g.usage_estimated = true;
  }
  return g;
}

/// Thread-safe: each call opens its own connection.
class RemoteClient : public PolicyClient {
 public:
  using SleepFn = std::function<void(std::chrono::milliseconds)>;
  using LogFn = std::function<void(const std::string&)>;

  explicit RemoteClient(EndpointConfig cfg) : cfg_(std::move(cfg)), url_(parse_url(cfg_.url)) {
    if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
  }

  void set_sleep(SleepFn fn) { sleep_ = std::move(fn); }
  void set_log(LogFn fn) { log_ = std::move(fn); }
  std::size_t retries() const noexcept { return retries_.load(); }
  std::size_t estimated_usage_count() const noexcept { return estimated_.load(); }

  Generation generate(const GenerationRequest& req) override {
    if (!req.view) throw Error(Errc::InvalidArgument, "request without a view");
    const std::string body = build_request_body(*req.view, req, cfg_.model).dump(-1, ' ', false, json::error_handler_t::replace);
    Generation g = parse_completion(post(body));
    if (g.usage_estimated) ++estimated_;
    return g;
  }

  /// POSTs a JSON body, retrying connection failures, 429 and 5xx with capped exponential backoff.
  std::string post(const std::string& body) {
    Errc last = Errc::TransportError;
    std::string last_what;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        ++retries_;
        const auto delay = std::min<long long>(static_cast<long long>(cfg_.backoff_ms) << (attempt - 1), cfg_.backoff_cap_ms);
        if (log_) log_("retry " + std::to_string(attempt) + " after " + last_what);
        sleep_(std::chrono::milliseconds(delay));
      }
      httplib::Client cli(url_.origin);
      const auto t = std::chrono::milliseconds(cfg_.timeout_ms);
      cli.set_connection_timeout(t);
      cli.set_read_timeout(t);
      cli.set_write_timeout(t);
      httplib::Headers headers;
      if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
      auto res = cli.Post(url_.path, headers, body, "application/json");
      if (!res) {
        const auto err = res.error();
        last = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) ? Errc::Timeout
                                                                                          : Errc::TransportError;
        last_what = httplib::to_string(err);
        continue;
      }
      if (res->status == 200) return res->body;
      if (res->status == 429 || res->status >= 500) {
        last = Errc::TransportError;
        last_what = "HTTP " + std::to_string(res->status);
        continue;
      }
      throw Error(Errc::ProtocolError, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    throw Error(last, last_what + " after " + std::to_string(cfg_.max_retries) + " retries");
  }

  const EndpointConfig& config() const noexcept { return cfg_; }

 private:
  EndpointConfig cfg_;
  ParsedUrl url_;
  std::string api_key_;
  SleepFn sleep_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  LogFn log_;
  std::atomic<std::size_t> retries_{0};
  std::atomic<std::size_t> estimated_{0};
};

/// Yes/no judgement through a chat endpoint. Any failure surfaces as JudgeUnavailable.
inline bool ask_yes_no(RemoteClient& client, const std::string& prompt, ImagePtr image = nullptr) {
  StateView v;
  Message m{Role::User, {}};
  if (image) m.content.push_back({ContentPart::Kind::Image, {}, image->id, image});
  m.content.push_back({ContentPart::Kind::Text, prompt + "\nReply with exactly one word: yes or no.", {}, nullptr});
  v.messages.push_back(std::move(m));
  GenerationRequest req;
  req.view = &v;
  req.temperature = 0.0;
  std::string reply;
  try {
    reply = normalize_answer(client.generate(req).text);
  } catch (const Error& e) {
    throw Error(Errc::JudgeUnavailable, e.what());
  }
  if (reply.rfind("yes", 0) == 0) return true;
  if (reply.rfind("no", 0) == 0) return false;
  throw Error(Errc::JudgeUnavailable, "judge reply is neither yes nor no");
}

/// Answer-equivalence judge for Verifier::external.
inline JudgeFn make_remote_judge(std::shared_ptr<RemoteClient> client) {
  return [client](std::string_view answer, std::string_view gold) {
    return ask_yes_no(*client, "Reference answer: " + std::string(gold) + "\nCandidate answer: " + std::string(answer) +
                                   "\nDoes the candidate mean the same as the reference?");
  };
}

}  // namespace zoomrl
