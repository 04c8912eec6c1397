"""Hypothesis strategies shared across test modules."""

from __future__ import annotations

from hypothesis import strategies as st

from abacgen.spec_model import DistributionSpec, GenerationSpec

distributions = st.one_of(
    st.just(DistributionSpec.uniform()),
    st.builds(
        DistributionSpec.normal,
        st.floats(-2, 8, allow_nan=False).map(lambda x: round(x, 3)),
        st.floats(0.05, 9, allow_nan=False).map(lambda x: round(x, 3)),
    ),
    st.builds(DistributionSpec.poisson, st.floats(0.1, 9, allow_nan=False).map(lambda x: round(x, 3))),
)


@st.composite
def specs(draw, max_size: int = 6, max_attrs: int = 3, max_card: int = 4, min_attrs: int = 0, max_rules: int = 3):
    counts = [draw(st.integers(min_attrs, max_attrs)) for _ in range(3)]
    cards = [tuple(draw(st.integers(1, max_card)) for _ in range(c)) for c in counts]
    dists = [tuple(draw(distributions) for _ in range(c)) for c in counts]
    return GenerationSpec(
        draw(st.integers(1, max_size)),
        draw(st.integers(1, max_size)),
        draw(st.integers(1, max_size)),
        draw(st.integers(0, max_rules)),
        draw(st.integers(0, max_rules)),
        *counts,
        *cards,
        *dists,
    )
