"""Smoke test for the pyhsj extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
Then run:                 python python/smoke_test.py
"""

import json
import math

import pyhsj


def check(cond, message):
    if not cond:
        raise SystemExit(f"FAIL: {message}")
    print(f"ok  {message}")


def main():
    n = 20
    truth = pyhsj.random_truth(n, 2, scale=0.3, seed=1)
    trial = pyhsj.Trial(0, [1, 2, 3, 4, 5, 6, 7, 8])
    probs = pyhsj.outcome_probabilities(trial, truth)
    check(len(probs) == trial.n_outcomes == 56, "56 outcomes for an 8-rank-2 trial")
    check(abs(sum(probs) - 1.0) < 1e-12, "outcome probabilities sum to one")
    check(trial.encode(trial.decode(17)) == 17, "outcome encode/decode round trip")

    oracle = pyhsj.Oracle(truth, seed=2)
    observations = oracle.observe_all(pyhsj.random_trials(n, 600, seed=3))
    back = pyhsj.Observation.from_json(observations[0].to_json())
    check(back.outcome == observations[0].outcome, "observation JSON round trip")

    ensemble = pyhsj.fit(observations, n, d=2, max_epochs=400, restarts=1, seed=4)
    check((ensemble.n, ensemble.d, len(ensemble.val_loss)) == (n, 2, 3), "three-member ensemble fitted")
    acc = pyhsj.triplet_accuracy(ensemble.means()[0], observations)
    check(acc > 0.6, f"fitted means order most triplets ({acc:.3f})")
    sim = ensemble.expected_similarity(mc_samples=16)
    check(len(sim) == n and all(abs(sim[i][i] - 1.0) < 1e-9 for i in range(n)), "expected similarity matrix")
    again = pyhsj.Ensemble.from_json(ensemble.to_json())
    check(again.means() == ensemble.means(), "ensemble JSON round trip")

    picked = ensemble.select_trials(
        n_queries=8, candidates_per_query=8, keep_per_query=4, n_confirmation=14, neighborhood=10, mc_samples=16
    )
    check(len(picked) == 46, "32 information-gain trials plus 14 confirmation trials")
    check(all(ig is None or ig >= 0.0 for _, ig in picked), "information gains are non-negative")

    collector = pyhsj.Collector(n, [t for t, _ in picked], seed=5)
    mirrors = {pyhsj.Collector.mirror_url(n, i) for i in range(n)}
    session_id, n_trials = collector.start_session("worker-a")
    result = None
    for slot in range(n_trials):
        _, refs = collector.trial(session_id, slot)
        mirror = next((k for k, url in enumerate(refs) if url in mirrors), None)
        first, second = (mirror, (mirror + 1) % 8) if mirror is not None else (0, 1)
        _, result = collector.submit(session_id, slot, first, second, 2.0)
    check(result == "premium" and collector.is_done(), "a perfect session is premium and ends collection")
    check(len(collector.take_observations()) == 46, "46 content observations from the session")

    p = pyhsj.sign_test(7, 8)
    check(math.isclose(p, 9 / 256), "sign test p-value")
    print(json.dumps({"ok": True}))


if __name__ == "__main__":
    main()
