import json
from dataclasses import replace

import numpy as np
import pytest

from wsls_commons.model import (
    AdaptiveConfig,
    GoodSpec,
    PopulationState,
    ToleranceProfile,
    TypeSpec,
    WorkloadSchedule,
    dump_scenario,
    errors,
    fig6_schedule,
    from_dict,
    load_scenario,
    table1_scenario,
    to_dict,
    validate,
)


def test_table1_is_clean(table1):
    assert validate(table1) == []
    assert table1.capacity == 700.0
    assert table1.lambda_u(1.0) == pytest.approx(0.7)


def test_size_mismatch_names_type_sizes(table1):
    bad = table1.with_overrides(types=(replace(table1.types[0], size=999),))
    out = validate(bad)
    assert len(out) == 1
    assert "TypeSpec sizes" in out[0].message
    assert out[0].field == "types.size"


def test_unusable_good_is_a_warning(table1):
    cfg = table1.with_overrides(timeout=0.010)
    out = validate(cfg)
    assert any("good 3 unusable: 2·d ≥ τ" in v.message for v in out)
    assert errors(out) == []


@pytest.mark.parametrize(
    "change, field",
    [
        (lambda c: c.with_overrides(goods=(GoodSpec(mu=-1),) + c.goods[1:]), "goods[0].mu"),
        (lambda c: c.with_overrides(goods=(GoodSpec(mu=1, c=3, k=2),) + c.goods[1:]), "goods[0].k"),
        (lambda c: c.with_overrides(horizon=0.0), "horizon"),
        (lambda c: c.with_tolerances([(0, 0, 0)]), "types[0].tolerance"),
        (lambda c: c.with_tolerances([(1, 1)]), "types[0].tolerance"),
    ],
)
def test_violations_name_their_field(table1, change, field):
    fields = [v.field for v in errors(validate(change(table1)))]
    assert field in fields


def test_adaptive_needs_learning(table1):
    ts = TypeSpec(1000, ToleranceProfile((5, 5, 5)), adaptive=True)
    assert "types[0].learning" in [v.field for v in validate(table1.with_overrides(types=(ts,)))]
    ts = TypeSpec(1000, ToleranceProfile((5, 5, 5)), adaptive=True, learning=AdaptiveConfig(beta=0.0))
    assert "types[0].learning.beta" in [v.field for v in validate(table1.with_overrides(types=(ts,)))]


def test_round_trip(tmp_path):
    cfg = table1_scenario(adaptive=True, schedule=fig6_schedule(), horizon=100.0, seed=7,
                          shift_policy="proportional", init="random_split")
    path = tmp_path / "s.json"
    dump_scenario(cfg, path)
    back = load_scenario(path)
    assert back == cfg
    assert to_dict(back) == to_dict(cfg)
    assert back.digest() == cfg.digest()


def test_defaults_filled_when_parsing():
    raw = {
        "goods": [{"mu": 10.0}, {"mu": 20.0}],
        "types": [{"size": 5, "tolerance": [1, 1]}],
        "n_users": 5,
        "timeout": 1.0,
        "schedule": [[10.0, 0.5]],
    }
    cfg = from_dict(json.loads(json.dumps(raw)))
    assert cfg.goods[1].k == 10 and cfg.goods[1].id == 1
    assert cfg.shift_policy.value == "uniform"
    assert validate(cfg) == []


def test_digest_changes_with_content(table1):
    assert table1.digest() != table1.with_overrides(seed=1).digest()
    assert table1.digest() == table1_scenario().digest()


def test_schedule_lookup_and_breakpoints():
    s = WorkloadSchedule(((10.0, 0.5), (5.0, 1.25)))
    assert s.rho_at(0.0) == 0.5 and s.rho_at(9.999) == 0.5 and s.rho_at(10.0) == 1.25
    assert s.breakpoints(12.0) == [(0.0, 10.0, 0.5), (10.0, 12.0, 1.25)]
    # the last segment extends to the horizon
    assert s.breakpoints(40.0)[-1] == (10.0, 40.0, 1.25)


def test_population_state(table1):
    st = PopulationState.uniform(table1)
    assert st.n.shape == (3, 1)
    assert st.population == pytest.approx(1000.0)
    assert np.allclose(st.totals, 1000 / 3)
    with pytest.raises(ValueError):
        PopulationState(np.array([[-1.0], [2.0]]))
