# SPDX-License-Identifier: Apache-2.0
"""Writes protocol_corpus.jsonl: mutated policy turns with their expected format verdicts.

Each mutation operator states by hand which violation codes it introduces, so the
labels do not come from the C++ parser. Tools in scope: image_zoom_in_tool only.
Run from this directory; the output is committed and read by the tests.
"""

import json
import random

rng = random.Random(20240611)

THINKS = [
    "The sign is too small to read.",
    "I need a closer look at the top-left corner.",
    "Compare a < b before deciding.",
    "Two candidates; check the right one.",
    "The label on the bottle is blurry",
]
LABELS = ["the apple on the desk", "red sign", "bottle label", "clock face", ""]
ANSWERS = ["B", "42", "the red car", "(C) blue", "7/8"]


def box():
    x1, y1 = rng.randint(0, 400), rng.randint(0, 400)
    return [x1, y1, x1 + rng.randint(5, 300), y1 + rng.randint(5, 300)]


def call_body(name="image_zoom_in_tool", bbox=None, label=None, omit_bbox=False):
    args = {}
    if not omit_bbox:
        args["bbox_2d"] = bbox if bbox is not None else box()
    lab = rng.choice(LABELS) if label is None else label
    if lab != "":
        args["label"] = lab
    return json.dumps({"name": name, "arguments": args})


def think():
    return "<think>" + rng.choice(THINKS) + "</think>"


def call(body=None):
    sep = rng.choice(["\n", "", "  \n"])
    return "<tool_call>" + sep + (body if body is not None else call_body()) + sep + "</tool_call>"


def answer():
    return "<answer>" + rng.choice(ANSWERS) + "</answer>"


def join(*parts):
    return rng.choice(["\n", "", " ", "\n\n"]).join(parts)


# (name, builder, expected codes). An empty set means well formed.
OPS = [
    ("ok_call", lambda: join(think(), call()), set()),
    ("ok_answer", lambda: join(think(), answer()), set()),
    ("ok_two_calls", lambda: join(think(), call(), call()), set()),
    ("ok_float_box", lambda: join(think(), call(call_body(bbox=[1.5, 2.25, 80.0, 90.75]))), set()),
    ("ok_no_label", lambda: join(think(), call(call_body(label=""))), set()),
    ("ok_padded", lambda: "  \n" + join(think(), answer()) + "\n  ", set()),
    ("missing_think_call", lambda: call(), {"MISSING_THINK"}),
    ("missing_think_answer", lambda: answer(), {"MISSING_THINK"}),
    ("think_only", lambda: think(), {"NO_ACTION"}),
    ("empty", lambda: "", {"MISSING_THINK", "NO_ACTION"}),
    ("unclosed_answer", lambda: join(think(), "<answer>" + rng.choice(ANSWERS)), {"UNCLOSED_TAG", "NO_ACTION"}),
    ("unclosed_call", lambda: join(think(), "<tool_call>" + call_body()), {"UNCLOSED_TAG", "NO_ACTION"}),
    ("trailing_text", lambda: join(think(), answer()) + " Hope this helps.", {"TRAILING_GARBAGE"}),
    ("leading_text", lambda: "Sure. " + join(think(), call()), {"TRAILING_GARBAGE"}),
    ("between_text", lambda: think() + " so I zoom " + call(), {"TRAILING_GARBAGE"}),
    ("two_thinks", lambda: join(think(), think(), answer()), {"MULTIPLE_THINK"}),
    ("two_answers", lambda: join(think(), answer(), answer()), {"MULTIPLE_ANSWERS"}),
    ("answer_with_call", lambda: join(think(), call(), answer()), {"ANSWER_WITH_CALL"}),
    ("answer_before_call", lambda: join(think(), answer(), call()), {"ANSWER_WITH_CALL", "BAD_ORDER"}),
    ("think_after_call", lambda: join(call(), think()), {"BAD_ORDER"}),
    ("think_after_answer", lambda: join(answer(), think()), {"BAD_ORDER"}),
    ("bad_json", lambda: join(think(), call(call_body()[:-1])), {"MALFORMED_JSON"}),
    ("single_quotes", lambda: join(think(), call(call_body().replace('"', "'"))), {"MALFORMED_JSON"}),
    ("array_body", lambda: join(think(), call("[" + call_body() + "]")), {"BAD_CALL_SHAPE"}),
    ("no_name", lambda: join(think(), call(json.dumps({"arguments": {"bbox_2d": box()}}))), {"BAD_CALL_SHAPE"}),
    ("args_not_object", lambda: join(think(), call(json.dumps({"name": "image_zoom_in_tool", "arguments": box()}))),
     {"BAD_CALL_SHAPE"}),
    ("unknown_tool", lambda: join(think(), call(call_body(name="image_crop_tool"))), {"UNKNOWN_TOOL"}),
    ("rotate_not_offered", lambda: join(think(), call(json.dumps({"name": "image_rotate_tool", "arguments": {"degrees": 90}}))),
     {"UNKNOWN_TOOL"}),
    ("missing_bbox", lambda: join(think(), call(call_body(omit_bbox=True, label="x"))), {"MISSING_PARAM"}),
    ("three_coords", lambda: join(think(), call(call_body(bbox=box()[:3]))), {"BAD_ARITY"}),
    ("five_coords", lambda: join(think(), call(call_body(bbox=box() + [1]))), {"BAD_ARITY"}),
    ("string_coord", lambda: join(think(), call(call_body(bbox=[10, "20", 100, 200]))), {"NON_NUMERIC"}),
    ("bbox_string", lambda: join(think(), call(call_body(bbox="10,20,100,200"))), {"BAD_PARAM_TYPE"}),
    ("label_number", lambda: join(think(), call(json.dumps({"name": "image_zoom_in_tool",
                                                           "arguments": {"bbox_2d": box(), "label": 7}}))),
     {"BAD_PARAM_TYPE"}),
    ("missing_think_bad_arity", lambda: call(call_body(bbox=box()[:2])), {"MISSING_THINK", "BAD_ARITY"}),
    ("answer_then_garbage_call", lambda: join(think(), answer()) + " then " + call(call_body(name="zoom")),
     {"TRAILING_GARBAGE", "ANSWER_WITH_CALL", "BAD_ORDER", "UNKNOWN_TOOL"}),
]

cases = []
# The verbatim example with and without a think span, then the operators in rotation.
verbatim = ('<tool_call>  \n{"name": "image_zoom_in_tool", "arguments": {"bbox_2d": [10, 20, 100, 200], '
            '"label": "the apple on the desk"}}  \n</tool_call>')
cases.append({"id": "verbatim_with_think", "text": "<think>Look at the apple.</think>\n" + verbatim, "expect": []})
cases.append({"id": "verbatim_alone", "text": verbatim, "expect": ["MISSING_THINK"]})
i = 0
while len(cases) < 200:
    name, build, codes = OPS[i % len(OPS)]
    cases.append({"id": f"{name}_{i // len(OPS)}", "text": build(), "expect": sorted(codes)})
    i += 1

with open("protocol_corpus.jsonl", "w") as f:
    for c in cases:
        f.write(json.dumps(c) + "\n")
print(len(cases), "cases")
