"""Regenerate frozen.json from the independent oracles in tests/oracles.py.

Run from the repository root: ``python3 tests/data/make_frozen.py``.  The
expected values come from oracle code only.  The small base AM and LM used
for search instances are trained once and stored as checkpoints next to this
file; pass ``--retrain-base`` to rebuild them (which changes every search
value).
"""

import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from conftest import (  # noqa: E402
    DATA,
    SEARCH_VOCAB,
    random_g2p_case,
    random_stats_pair,
    search_instance,
    search_string,
)
from oracles import (  # noqa: E402
    brute_force_fused,
    central_difference,
    dedup_expected,
    edit_distance_memo,
    mwer_loss_plain,
    surprising_oracle,
    wordlist_scan,
)
from shallowfusion.models import AttentionAcousticModel, CharLanguageModel, Featurizer  # noqa: E402


def train_search_base():
    """Small AM and LM fitted on random 2 to 5 symbol strings; frozen as checkpoints."""
    rng = np.random.default_rng(0)
    sents = [search_string(rng) for _ in range(40)]
    fz = Featurizer(vocab=SEARCH_VOCAB, dim=3, sigma=0.3)
    am = AttentionAcousticModel(vocab=SEARCH_VOCAB, enc_size=8, dec_size=8, embed_size=4, attn_size=4, pos_dim=4,
                                epochs=1000, max_steps=300, seed=0).fit(fz.transform(sents), sents)
    am.featurizer_config_ = fz.config()
    lm = CharLanguageModel(vocab=SEARCH_VOCAB, embed_size=4, hidden_size=8, proj_size=4, epochs=1000,
                           max_steps=300, batch_size=8, seed=0).fit(sents)
    am.save(DATA / "search_base_am.ckpt")
    lm.save(DATA / "search_base_lm.ckpt")


def main():
    if "--retrain-base" in sys.argv or not (DATA / "search_base_am.ckpt").exists():
        train_search_base()
    rng = np.random.default_rng(2024)
    out = {}

    search = []
    for seed in range(10):
        am, lm, feats = search_instance(seed)
        for alpha, beta in [(0.0, 0.0), (0.1, 0.06), (1.0, 0.5)]:
            score, tokens = brute_force_fused(am, lm, feats, alpha, beta, 0.5, max_len=5)
            search.append({"seed": seed, "alpha": alpha, "beta": beta, "tokens": list(tokens), "score": score})
    out["fused_argmax"] = search

    words = "abcd"
    pairs = []
    for _ in range(50):
        h = " ".join(rng.choice(list(words), size=int(rng.integers(0, 7))))
        r = " ".join(rng.choice(list(words), size=int(rng.integers(0, 7))))
        pairs.append({"hyp": h, "ref": r, "total": edit_distance_memo(h, r)})
    out["edit_distance"] = pairs

    mw = []
    for k in (1, 2, 4):
        scores = rng.normal(scale=2.0, size=k)
        edits = rng.integers(0, 5, size=k)
        grad = central_difference(lambda s: mwer_loss_plain(s, edits, True), scores, eps=1e-6)
        mw.append({"scores": scores.tolist(), "edits": edits.tolist(),
                   "loss": mwer_loss_plain(scores, edits, True), "grad": grad.tolist()})
    out["mwer"] = mw

    entries, ws, lexicon = random_g2p_case(np.random.default_rng(7), n_words=60)
    out["g2p"] = {"entries": {k: sorted(map(list, v)) for k, v in entries.items()},
                  "lexicon": {w: list(p) for w, p in lexicon.items()},
                  "words": ws,
                  "surprising": [surprising_oracle(w, lexicon, entries) for w in ws]}

    am_c, lm_c = random_stats_pair(np.random.default_rng(11), n_words=500)
    out["wordlist"] = {"am": am_c, "lm": lm_c, "result": wordlist_scan(am_c, lm_c, 5, 150)}

    lines = [str(x) for x in rng.integers(0, 12, size=400) ** 2]
    out["dedup"] = {"lines": lines, "counts": dict(dedup_expected(lines))}

    (HERE / "frozen.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
