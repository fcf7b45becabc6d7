"""Probability shifts implied by the published coefficients.

Evaluates the conditional logit at the published predictor medians and
shifts one variable at a time by roughly one standard deviation.

    python3 demos/01_what_if.py
"""
from techadopt.choice import REFERENCE_COEFFICIENTS, REFERENCE_MEDIANS, probabilities, verify_claims, what_if

base = probabilities(REFERENCE_MEDIANS, REFERENCE_COEFFICIENTS)
print(f"at the medians: P(data.table) = {base['datatable']:.3f}, P(tidy) = {base['tidy']:.3f}\n")

print(f"{'variable':<20}{'delta':>8}  {'alt':<10}{'quoted':>14}{'computed':>16}  ok")
for r in verify_claims():
    quoted = f"{r['expected_before']:.2f}->{r['expected_after']:.2f}"
    got = f"{r['before']:.3f}->{r['after']:.3f}"
    print(f"{r['variable']:<20}{r['delta']:>8g}  {r['alternative']:<10}{quoted:>14}{got:>16}  {r['passed']}")

# the same machinery answers other questions, e.g. a larger tidy community
w = what_if(REFERENCE_COEFFICIENTS, REFERENCE_MEDIANS, "StckExch.tidy", 10)
print(f"\n10 more high-scoring tidy questions: P(tidy) {w.before['tidy']:.3f} -> {w.after['tidy']:.3f}")
