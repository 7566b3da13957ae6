import math

import numpy as np
import pytest

from csvx.core import Coalition, enumerate_coalitions
from csvx.cvf import (
    CvfEvaluationError,
    CvfQuery,
    avg_delta_q,
    avg_delta_v,
    build_cvf,
    cvf_table,
    cvf_table_json,
    delta_q,
    delta_v,
    successor_support,
)
from csvx.solver import ContractError, PolicyArtifact, TrainConfig, abstract_value_iteration, value_iteration
from csvx.store import ArtifactStore, UnconvergedArtifactError

S1 = (0, 0)
COL, FULL = Coalition([1]), Coalition([0, 1])


def _artifact(q_rows, model=None, terminal_values=None):
    q = np.asarray(q_rows, dtype=float)
    return PolicyArtifact(
        env="synthetic", coalition=Coalition([0]), seed=None, config_hash="x", exact=True, gamma=1.0,
        action_names=tuple(f"a{k}" for k in range(q.shape[1])),
        obs_keys=tuple(str(k) for k in range(q.shape[0])), q=q, visited=np.ones_like(q, dtype=bool),
        terminal_values=terminal_values or {}, model=model or {},
    )


class TestDeltas:
    def test_delta_q(self, gw1):
        art = _artifact([[9, 7]])
        assert delta_q(art, "0", 0, 0) == 0.0
        assert delta_q(art, "0", 0, 1) == 2.0
        full = value_iteration(gw1)
        assert delta_q(full, "0,0", gw1.action_index("right"), gw1.action_index("up")) > 0

    def test_delta_v(self, gw1):
        assert delta_v({"a": 10.0}, "a", "a") == 0.0
        assert delta_v({"a": 10.0, "b": 8.0}, "a", "b") == 2.0
        with pytest.raises(LookupError):
            delta_v({"a": 1.0}, "a", "z")
        # from s2 = (1, 0): right reaches (1, 1), up reaches (0, 0)
        assert delta_v(value_iteration(gw1), "1,1", "0,0") > 0

    def test_avg_delta_q(self, gw1):
        assert avg_delta_q(_artifact([[5, 5, 5, 5]]), "0", 0) == 0.0
        assert avg_delta_q(_artifact([[9, 7, 7, 5]]), "0", 0) == 2.0
        with pytest.raises(ContractError):
            avg_delta_q(_artifact([[9, 7, 7, 5]]), "0", 1)
        full = value_iteration(gw1)
        assert avg_delta_q(full, "0,0", gw1.action_index("right")) > 0

    def test_avg_delta_v(self, gw1):
        model = {(0, 0): [("1", 1.0, -1.0)], (0, 1): [("2", 1.0, -1.0)]}
        art = _artifact([[8, 6], [9, 9], [7, 7]], model)
        assert successor_support(art, "0") == ["1", "2"]
        assert avg_delta_v(art, "0", 0) == 1.0
        assert avg_delta_v(art, "!0") == 0.0
        full = value_iteration(gw1)
        assert set(successor_support(full, "1,1")) == {"0,1", "2,1", "1,0", "1,2"}
        assert avg_delta_v(full, "1,1") > 0


class TestQuery:
    def test_validation(self):
        with pytest.raises(ValueError):
            CvfQuery("gridworld1", S1, "cd", "q", 0, 0)
        with pytest.raises(ValueError):
            CvfQuery("gridworld1", S1, "cd", "q", 0)
        with pytest.raises(ValueError):
            CvfQuery("gridworld1", S1, "lime")
        with pytest.raises(ValueError):
            CvfQuery("gridworld1", S1, "acd", "x")
        with pytest.raises(ValueError):
            CvfQuery("gridworld1", S1, "acd", binding="floating")

    def test_labels_and_swap(self):
        q = CvfQuery("gridworld1", S1, "cd", "q", 0, 2)
        assert q.label == "CD(0,2)" and q.swapped().label == "CD(2,0)"
        assert CvfQuery("gridworld1", S1, "vanilla", i=3).label == "Vani(3)"

    def test_rank_out_of_range(self, gw1_store):
        with pytest.raises(ValueError):
            build_cvf(CvfQuery("gridworld1", S1, "vanilla", i=4), gw1_store)

    def test_terminal_state_rejected(self, gw1_store):
        with pytest.raises(Exception, match="terminal"):
            build_cvf(CvfQuery("gridworld1", (0, 3), "acd"), gw1_store)


@pytest.mark.parametrize("source", ["q", "v"])
@pytest.mark.parametrize("method,i,j", [("vanilla", 0, None), ("vanilla", 2, None), ("cd", 0, 1), ("acd", 0, None)])
def test_empty_coalition_is_zero(gw1_store, method, i, j, source):
    fn = build_cvf(CvfQuery("gridworld1", S1, method, source, i, j), gw1_store)
    assert fn(Coalition()) == 0.0
    assert all(math.isfinite(v) for _, v in cvf_table(fn))


def test_full_coalition_matches_raw_deltas(gw1_store, gw1):
    art = gw1_store.get(FULL)
    ranking = build_cvf(CvfQuery("gridworld1", S1, "acd"), gw1_store).actions
    cd = build_cvf(CvfQuery("gridworld1", S1, "cd", "q", 0, 1), gw1_store)
    assert abs(cd(FULL) - delta_q(art, "0,0", ranking[0], ranking[1])) <= 1e-12
    acd = build_cvf(CvfQuery("gridworld1", S1, "acd", "q"), gw1_store)
    q = art.q[art.row("0,0")]
    assert abs(acd(FULL) - np.mean(q[ranking[0]] - q)) <= 1e-12


def test_vanilla_decomposition(gw1_store, taxi_store):
    for store, s, n_actions in ((gw1_store, S1, 4), (taxi_store, (0, 4, 4, 1), 6)):
        for source in "qv":
            for i in range(n_actions):
                for j in range(n_actions):
                    if i == j:
                        continue
                    env = store.env.name
                    cd = build_cvf(CvfQuery(env, s, "cd", source, i, j), store)
                    vi = build_cvf(CvfQuery(env, s, "vanilla", source, i), store)
                    vj = build_cvf(CvfQuery(env, s, "vanilla", source, j), store)
                    for c in enumerate_coalitions(store.env.n_features):
                        assert cd(c) == vi(c) - vj(c)


def test_cd_antisymmetry_is_exact(gw1_store):
    for s in gw1_store.env.nonterminal_states:
        for source in "qv":
            fwd = build_cvf(CvfQuery("gridworld1", s, "cd", source, 0, 3), gw1_store)
            back = build_cvf(fwd.query.swapped(), gw1_store)
            for c in enumerate_coalitions(2):
                assert fwd(c) == -back(c)


def test_cd_on_column_coalition(gw1_store, gw1):
    fn = build_cvf(CvfQuery("gridworld1", S1, "cd", "q", 0, 1), gw1_store)
    right, second = fn.actions[0], fn.actions[1]
    art = gw1_store.get(COL)
    assert fn(COL) == art.q_value("0", right) - art.q_value("0", second)
    exact = abstract_value_iteration(gw1, COL)
    assert np.sign(fn(COL)) == np.sign(exact.q[0, right] - exact.q[0, second])


def test_fixed_binding_uses_full_ranking(gw1_store, gw1):
    fn = build_cvf(CvfQuery("gridworld1", S1, "vanilla", "q", 0), gw1_store)
    assert gw1.action_names[fn.actions[0]] == "right"
    row_art = gw1_store.get(Coalition([0]))
    assert fn(Coalition([0])) == row_art.q_value("0", fn.actions[0])


def test_per_coalition_binding(gw1_store):
    fn = build_cvf(CvfQuery("gridworld1", S1, "vanilla", "q", 0, binding="per-coalition"), gw1_store)
    for c in (Coalition([0]), COL, FULL):
        art = gw1_store.get(c)
        key = ",".join(str(S1[m]) for m in c.members)
        assert fn(c) == art.q[art.row(key)].max()


def test_cvf_table_shape(gw1_store):
    fn = build_cvf(CvfQuery("gridworld1", S1, "acd", "v"), gw1_store)
    table = cvf_table(fn)
    assert len(table) == 4 and table[0] == (Coalition(), 0.0)
    assert cvf_table_json(fn)[3]["coalition"] == "0,1"
    dummy = ArtifactStore(__import__("csvx.envs", fromlist=["make_env"]).make_env("gridworld1+dummy"),
                          TrainConfig(episodes=500), 0)
    assert len(cvf_table(build_cvf(CvfQuery("gridworld1+dummy", (0, 0, 0), "acd"), dummy))) == 8


def test_unconverged_artifacts_block_build(gw1):
    store = ArtifactStore(gw1, TrainConfig(episodes=20, refine=False), 0)
    with pytest.raises(UnconvergedArtifactError) as info:
        build_cvf(CvfQuery("gridworld1", S1, "acd"), store)
    assert info.value.coalitions
    fn = build_cvf(CvfQuery("gridworld1", S1, "acd"), store, force=True)
    assert fn(Coalition()) == 0.0


def test_unobserved_transition_names_coalition(taxi):
    store = ArtifactStore(taxi, TrainConfig(episodes=2, max_steps=5), 0)
    fn = build_cvf(CvfQuery("taxi", (0, 4, 4, 1), "acd", "v"), store, force=True)
    with pytest.raises(CvfEvaluationError, match="coalition"):
        cvf_table(fn)


def test_groups_map_players_to_feature_unions(gw1_store):
    fn = build_cvf(CvfQuery("gridworld1", S1, "acd", "q", groups=((0, 1),)), gw1_store)
    full = build_cvf(CvfQuery("gridworld1", S1, "acd", "q"), gw1_store)
    assert fn.n == 1 and fn(Coalition([0])) == full(FULL)
