"""Recorded per-participant decisions from a 30-participant reference
evaluation of the three systems; frozen here as a regression fixture for the
accuracy bookkeeping (22/30, 21/30, and 23/30 correct)."""

from aufusion.evaluate import FoldRow
from aufusion.ingest import Label

_D = Label.DEPRESSED
_N = Label.NONDEPRESSED

# (label, likelihood-ratio decision, vote-majority decision, fused decision)
REFERENCE_DECISIONS = [
    (_D, _D, _D, _D),
    (_D, _N, _D, _D),
    (_N, _N, _N, _N),
    (_D, _D, _D, _D),
    (_N, _N, _N, _N),
    (_N, _N, _N, _N),
    (_N, _N, _D, _N),
    (_N, _D, _D, _D),
    (_N, _N, _N, _N),
    (_D, _N, _D, _D),
    (_N, _D, _D, _D),
    (_N, _N, _N, _N),
    (_D, _D, _N, _N),
    (_D, _N, _N, _N),
    (_D, _D, _D, _D),
    (_N, _N, _N, _N),
    (_D, _D, _N, _D),
    (_N, _N, _N, _N),
    (_N, _N, _D, _D),
    (_D, _D, _D, _D),
    (_D, _D, _D, _D),
    (_N, _D, _N, _N),
    (_D, _D, _N, _D),
    (_D, _N, _D, _N),
    (_N, _N, _N, _N),
    (_D, _D, _D, _D),
    (_D, _D, _D, _D),
    (_N, _D, _D, _D),
    (_N, _N, _N, _N),
    (_D, _D, _D, _D),
]


def reference_rows() -> list[FoldRow]:
    """The fixture as FoldRow objects (score internals filled with stubs)."""
    rows = []
    for i, (label, gmm_d, rp_d, comb_d) in enumerate(REFERENCE_DECISIONS, start=1):
        rows.append(
            FoldRow(
                participant_id=str(i),
                label=label,
                gmm_decision=gmm_d,
                rankpool_decision=rp_d,
                combined_decision=comb_d,
                ll_dep=0.0,
                ll_ndep=0.0,
                n_frames=1,
                n_segments=1,
                n_dep_votes=0,
                fused_score=0.0,
                tau=0.0,
                gmm_dep_hash="",
                gmm_ndep_hash="",
                mlp_hash="",
            )
        )
    return rows
