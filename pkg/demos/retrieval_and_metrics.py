# Retrieval index and report metrics on hand-sized inputs.
#
#   python demos/retrieval_and_metrics.py

import numpy as np

from tksg.metrics import bleu, ce_metrics, evaluate, meteor_pair, rouge_l_pair
from tksg.retrieval import build_index, query_topk

# Three orthonormal-ish rows; the query sits on the first axis.
index = build_index(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), ["a", "b", "c"])
hit = query_topk(index, [1.0, 0.0], k=2)
print(hit.ids, np.round(hit.sims, 5))  # ('a', 'c') (1.0, 0.70711)

# Excluding a sample's own report is how training avoids leaking the target.
print(query_topk(index, [1.0, 0.0], k=2, exclude=["a"]).ids)

# Clipped unigram precision: "the" appears twice in the reference.
print("BLEU-1", bleu(["the the the the the the the"], ["the cat is on the mat"], 1))  # 2/7
# Short candidate: brevity penalty exp(1 - 6/3)
print("BLEU-1", bleu(["a b c"], ["a b c d e f"], 1))
print("ROUGE-L", rouge_l_pair("a b c d".split(), "a c d b".split()))  # 0.75
print("METEOR", meteor_pair(["the", "cat"], ["the", "cat"]))  # 0.9375
print("CE", ce_metrics([[1, 1, 0, 0]], [[1, 0, 1, 0]]))  # (0.5, 0.5, 0.5)

report = evaluate(["no pleural effusion ."], ["no pleural effusion is seen ."])
print(report.to_json())
