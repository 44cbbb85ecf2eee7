"""From raw dialogue records to padded id batches.

Run:  python3 demos/02_text_pipeline.py
"""
from rsvp.text import (
    DialogueRecord,
    build_vocab,
    encode,
    flatten_dialogue,
    label_set,
    preprocess,
    split,
)
from rsvp.synth import gen_data

print("== cleanup ==")
raw = "hi \U0001F44D please check https://shop.example/order/9 it failed"
print(f"raw:   {raw!r}")
print(f"clean: {preprocess(raw)!r}\n")

print("== multi-turn flattening ==")
rec = DialogueRecord(
    id="d1",
    utterance_turns=["my payment failed", "it was order id00042"],
    response_turns=["let me check id00042", "the payment went through after a retry"],
    intents=["PaymentIssue"],
)
utterance, response = flatten_dialogue(rec)
print(f"utterance: {utterance!r}")
print(f"response:  {response!r}\n")

print("== synthetic corpus, vocab, splits ==")
records = gen_data(5, 40, seed=7)
train, valid, test = split(records, (0.8, 0.1, 0.1), seed=0)
print(f"records: {len(records)}  ->  train {len(train)} / valid {len(valid)} / test {len(test)}")
corpus = [flatten_dialogue(r)[0] for r in train] + [flatten_dialogue(r)[1] for r in train]
vocab = build_vocab(corpus)
print(f"vocab size (train split only): {len(vocab)}")
labels = label_set(records)
print(f"intents: {labels}\n")

print("== encoding ==")
ex = encode(train[0], vocab, labels, h_max=64, t_max=64)
print(f"utterance ids ({len(ex.utterance_ids)}): {ex.utterance_ids[:12]} ...")
print(f"response ids  ({len(ex.response_ids)}): {ex.response_ids[:12]} ...")
print(f"label index: {ex.label} -> {labels[ex.label]}")
print("id 0..5 are reserved: [PAD] [UNK] [CLS] [SEP] [BOS] [EOS]")
