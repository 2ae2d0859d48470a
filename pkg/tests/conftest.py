import json
import math
import os
import shutil

import numpy as np
import pytest

from app.core.machine_model import MachineParams, solve_equilibrium

REPO_CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")

IEEE9_G2 = dict(T_J=12.8, D=10.0, T_d0p=6.0, T_q0p=0.535, X_d=0.8958, X_q=0.8645, X_dp=0.1198, X_qp=0.1969)


@pytest.fixture
def params():
    return MachineParams(**IEEE9_G2)


@pytest.fixture
def operating_input():
    """[T_m, E_f, U_t, phi] placeholder at the ieee9-like terminal phasor."""
    return np.array([0.0, 0.0, 1.025, math.radians(9.3)])


@pytest.fixture
def equilibrium(params, operating_input):
    x0, T_m, E_f = solve_equilibrium(operating_input, params, P_target=1.63, Q_target=0.067)
    u = operating_input.copy()
    u[0], u[1] = T_m, E_f
    return np.asarray(x0), u


@pytest.fixture
def short_scenario_doc():
    return {
        "name": "short",
        "params_ref": "g2-ieee9-like",
        "duration": 3.0,
        "step": 0.02,
        "operating_point": {"U_t": 1.025, "phi_deg": 9.3, "P_target": 1.63, "Q_target": 0.067},
        "disturbance": [{"signal": "U_t", "kind": "step", "start": 0.4, "end": 0.5, "value": 0.6}],
        "noise_profile_ref": "gaussian",
        "bad_data": {"omega": {"events": [{"start_time": 1.0, "count": 1, "magnitude": 20.0, "mode": "add"},
                                          {"start_time": 2.0, "count": 5, "magnitude": 20.0, "mode": "add"}]}},
    }


@pytest.fixture
def config_dir(tmp_path, short_scenario_doc):
    """Bundled machines and profiles plus a 3 s scenario and a two-seed experiment."""
    root = tmp_path / "configs"
    for kind in ("machines", "profiles"):
        shutil.copytree(os.path.join(REPO_CONFIGS, kind), root / kind)
    (root / "scenarios").mkdir()
    (root / "experiments").mkdir()
    (root / "scenarios" / "short.json").write_text(json.dumps(short_scenario_doc), encoding="utf-8")
    experiment = {
        "name": "short-gaussian",
        "scenario_ref": "short",
        "profile_ref": "gaussian",
        "filters": ["ckf", "rckf"],
        "huber": {"c": 1.5},
        "seeds": [3, 4],
        "out": str(tmp_path / "out"),
        "sweep": {"profiles": ["gaussian", "laplace"]},
    }
    (root / "experiments" / "short-gaussian.json").write_text(json.dumps(experiment), encoding="utf-8")
    return str(root)
