"""Synthetic customer-service dialogue generator.

Emits utterance/response/intent records where each intent owns a disjoint
keyword family (so a bag-of-words linear classifier separates the intents)
and each record carries a unique reference token echoed by the agent (so
retrieval between utterances and responses is learnable). Deterministic
under the seed.
"""
from __future__ import annotations

import numpy as np

from .text import DialogueRecord, save_jsonl

# intent name, customer-side keyword family, agent-side resolution phrase
_THEMES = [
    ("Refund", ["refund", "reimbursement", "chargeback", "repayment"],
     "i have issued the refund to your original payment method"),
    ("BookingChange", ["reschedule", "rebook", "postpone", "moveback"],
     "your booking has been moved to the new date"),
    ("Cancellation", ["cancel", "cancellation", "terminate", "withdraw"],
     "the order is now cancelled and closed"),
    ("DeliveryStatus", ["shipment", "tracking", "parcel", "courier"],
     "the parcel is with the courier and arrives tomorrow"),
    ("AccountAccess", ["password", "login", "signin", "locked"],
     "i have reset the access so you can sign in again"),
    ("PaymentIssue", ["payment", "card", "declined", "invoice"],
     "the payment went through after retrying the card"),
    ("VoucherHelp", ["voucher", "coupon", "promo", "discount"],
     "the voucher is applied and the discount shows at checkout"),
    ("ItineraryInfo", ["itinerary", "schedule", "meetup", "departure"],
     "the meeting point and departure time are on the voucher page"),
    ("ProductQuestion", ["manual", "instructions", "feature", "warranty"],
     "press the button on the device as shown in the manual"),
    ("Complaint", ["complaint", "disappointed", "unacceptable", "escalate"],
     "i have escalated this to the duty manager with high priority"),
]

_OPENERS = ["hi", "hello", "hey there", "good morning", "excuse me"]
_ASKS = [
    "i need help with my {kw}",
    "there is a problem with the {kw}",
    "could you look into the {kw} issue",
    "my {kw} request is still pending",
    "i am asking about a {kw} matter",
]
_FOLLOWUPS = [
    "it concerns booking {uid}",
    "the reference is {uid}",
    "this is about order {uid}",
]
_AGENT_OPENERS = [
    "thanks for waiting let me check {uid}",
    "sure i am looking at {uid} now",
    "i see the details for {uid}",
]


def _intent_bank(n_intents: int, vocab_style: str):
    if vocab_style not in ("basic", "abstract"):
        raise ValueError(f"unknown vocab_style {vocab_style!r}")
    bank = []
    for i in range(n_intents):
        if vocab_style == "basic" and i < len(_THEMES):
            bank.append(_THEMES[i])
        else:
            kws = [f"topic{i}word{j}" for j in range(4)]
            bank.append((f"Intent{i}", kws, f"resolved the topic{i}word0 situation for you"))
    return bank


def gen_data(
    n_intents: int,
    n_per_intent: int,
    vocab_style: str = "basic",
    seed: int = 0,
    out_path=None,
) -> list[DialogueRecord]:
    """Generate n_intents * n_per_intent single-intent dialogue records."""
    if n_intents < 2:
        raise ValueError(f"need at least 2 intents, got {n_intents}")
    if n_per_intent < 1:
        raise ValueError(f"need at least 1 record per intent, got {n_per_intent}")
    rng = np.random.default_rng(seed)
    bank = _intent_bank(n_intents, vocab_style)
    records = []
    uid_counter = 0
    for intent_idx, (name, keywords, resolution) in enumerate(bank):
        for _ in range(n_per_intent):
            uid = f"id{seed}x{uid_counter:05d}"
            uid_counter += 1
            kw = keywords[int(rng.integers(len(keywords)))]
            opener = _OPENERS[int(rng.integers(len(_OPENERS)))]
            ask = _ASKS[int(rng.integers(len(_ASKS)))].format(kw=kw)
            follow = _FOLLOWUPS[int(rng.integers(len(_FOLLOWUPS)))].format(uid=uid)
            if rng.random() < 0.5:
                utterance_turns = [f"{opener} {ask}", follow]
            else:
                utterance_turns = [f"{opener} {ask} {follow}"]
            agent_open = _AGENT_OPENERS[int(rng.integers(len(_AGENT_OPENERS)))].format(uid=uid)
            response_turns = [agent_open, f"{resolution} regarding the {kw}"]
            records.append(
                DialogueRecord(
                    id=uid,
                    utterance_turns=utterance_turns,
                    response_turns=response_turns,
                    intents=[name],
                )
            )
    if out_path is not None:
        save_jsonl(records, out_path)
    return records
