import json

import pytest


@pytest.fixture
def run_config_path(tmp_path):
    """A small, fast run config: seed tree + ellipsoid mask + gco settings."""
    config = {
        "gco": {
            "terminal_radius_mean": 10.79,
            "terminal_radius_sd": 2.41,
            "terminal_count": 25,
            "inlet_flow": 1.167e11,
            "viscosity": 3.6e-3,
            "material_weight": 6e-8,
            "murray_gamma": 3.0,
            "relax_tolerance": 1e-6,
            "max_iterations": 5,
            "rng_seed": None,
        },
        "prebuilt": {
            "nodes": [
                {"id": 0, "pos_um": [320.0, 320.0, 620.0]},
                {"id": 1, "pos_um": [320.0, 320.0, 500.0]},
                {"id": 2, "pos_um": [220.0, 280.0, 380.0]},
                {"id": 3, "pos_um": [420.0, 360.0, 380.0]},
            ],
            "edges": [
                {"from": 0, "to": 1, "radius_um": 80.0, "flow_um3s": None},
                {"from": 1, "to": 2, "radius_um": 60.0, "flow_um3s": None},
                {"from": 1, "to": 3, "radius_um": 60.0, "flow_um3s": None},
            ],
            "root": 0,
        },
        "mask": {
            "ellipsoid": {"center": [320.0, 320.0, 320.0],
                          "semi_axes": [260.0, 230.0, 200.0]}
        },
        "dataset": {"w_c_choices": [5e-8, 6e-8, 7e-8], "terminal_count_jitter": 0.2},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config, indent=2))
    return path
