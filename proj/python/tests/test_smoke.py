import json

import numpy as np
import pytest

import gandissect as gd


@pytest.fixture(scope="module")
def world():
    return gd.load_world("default")


def test_world_layout(world):
    assert world.units == 64
    assert "tree" in world.concepts
    assert len(world.hash()) == 64
    assert gd.world_from_yaml(world.to_yaml()).hash() == world.hash()


def test_generate_is_deterministic(world):
    a = gd.generate(world, seed=3)
    b = gd.generate(world, seed=3)
    assert a.shape == (32, 32, 3)
    assert a.min() >= 0.0 and a.max() <= 1.0
    np.testing.assert_array_equal(a, b)


def test_ablation_removes_the_concept(world):
    units = world.causal_units("tree")
    image = gd.intervene(world, units, mode="ablate", seed=1)
    masks = gd.segment(world, image, parts=False)
    assert masks["tree"].sum() == 0


def test_zero_strength_is_a_no_op(world):
    image = gd.intervene(world, world.causal_units("sky"), strength=0.0, seed=2)
    np.testing.assert_array_equal(image, gd.generate(world, seed=2, stream="intervene"))


def test_bad_intervention_raises(world):
    with pytest.raises(ValueError):
        gd.intervene(world, [99])


def test_dissect_returns_a_report(world):
    report = gd.dissect(world, n_validation=20, n_eval=20)
    assert len(report["units"]) == 64
    assert report["matched_units"] > 0


def test_distractor_has_no_effect(world):
    distractor = world.distractor_units("tree")[0]
    result = gd.ace(world, [distractor], "tree", samples=30)
    assert result["raw"] == 0.0


def test_optimize_short_run(world):
    solution = gd.optimize(world, "sky", lam=0.15, steps=10)
    assert len(solution["alpha"]) == 64
    assert all(0.0 <= a <= 1.0 for a in solution["alpha"])


def test_frechet_closed_form():
    assert gd.frechet_distance([0.0, 0.0], [1, 0, 0, 1], [1.0, 1.0], [1, 0, 0, 1]) == pytest.approx(2.0, abs=1e-9)


def test_cli_usage_and_output(tmp_path):
    code, _, _ = gd.cli([])
    assert code == 1
    code, _, err = gd.cli(["generate", "--count", "1", "--out", str(tmp_path)])
    assert code == 0, err
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "generate"
