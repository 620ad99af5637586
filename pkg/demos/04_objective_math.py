"""
The two training objectives, numerically
========================================
"""

from fractions import Fraction

from mechact.objectives import (
    DESIRABLE, UNDESIRABLE, KtoConfig, ScoredTrajectory,
    estimate_z0, imao_nll, kto_loss, lambda_from_counts, suggested_weight_ratio,
)

# --- masked NLL over one tokenized chat record ----------------------------
# observation tokens carry mask 0, assistant tokens mask 1; only the latter
# contribute loss
logprobs = [-0.2, -1.7, -0.4, -2.1, -0.3]
mask = [0, 1, 1, 0, 1]
nll = imao_nll(logprobs, mask)
print("sum nll:", nll.sum_nll, " mean:", round(nll.mean_nll, 6), " tokens trained:", nll.n_trained_tokens)

# --- preference value curve ------------------------------------------------
# a desirable sample is rewarded for outscoring the reference model; an
# undesirable one for the opposite. beta sharpens the transition around z0.
config = KtoConfig(beta=1.0, z0=0.0)
print()
print("logratio   desirable loss   undesirable loss")
for r in (-3.0, -1.0, 0.0, 1.0, 3.0):
    d = kto_loss([ScoredTrajectory(r, 0.0, DESIRABLE)], config).per_sample[0].loss
    u = kto_loss([ScoredTrajectory(r, 0.0, UNDESIRABLE)], config).per_sample[0].loss
    print(f"{r:8.1f}   {d:14.6f}   {u:16.6f}")

# --- the reference point z0 ------------------------------------------------
# estimated from policy/reference logratios on mismatched prompt-completion
# pairs, floored at zero
mismatched = [ScoredTrajectory(lr, 0.0, UNDESIRABLE) for lr in (0.15, 0.42, 0.03)]
print()
print("estimated z0:", round(estimate_z0(mismatched), 6))

batch = [
    ScoredTrajectory(0.8, 0.1, DESIRABLE),
    ScoredTrajectory(-0.5, 0.2, UNDESIRABLE),
    ScoredTrajectory(0.1, 0.0, DESIRABLE),
]
result = kto_loss(batch, KtoConfig(z0_mode="batch_estimate"), mismatched=mismatched)
print("batch loss:", round(result.loss, 6), " z0 used:", round(result.z0_used, 6))

# --- class weights ----------------------------------------------------------
# with unbalanced labels the two weights are scaled so that
# weight_pos * n_pos : weight_neg * n_neg stays at 4 : 3, exactly
n_pos, n_neg = 16, 34
ratio = suggested_weight_ratio(n_pos, n_neg)
print()
print(f"n_pos={n_pos} n_neg={n_neg} -> lambda_pos/lambda_neg = {ratio} = {float(ratio):.6f}")
lam_pos, lam_neg = lambda_from_counts(n_pos, n_neg, lambda_neg=Fraction(1))
check = Fraction(lam_pos) * n_pos / (Fraction(lam_neg) * n_neg)
print("check:", lam_pos, "*", n_pos, "/", f"({lam_neg} * {n_neg})", "=", check)
