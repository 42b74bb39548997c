import os

import pytest
from hypothesis import HealthCheck, settings

import nnflowctl.state as state_mod

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture(autouse=True)
def energy_audit(monkeypatch):
    """Every converged solve made by a test must satisfy the energy estimate
    ``||Dy|| <= C8_hat ||u|| + 1e-8`` and the energy identity to 1e-7."""
    seen = []
    original = state_mod._finish

    def recording(*args, **kwargs):
        sol = original(*args, **kwargs)
        seen.append(sol)
        return sol

    monkeypatch.setattr(state_mod, "_finish", recording)
    yield seen
    for sol in seen:
        if not sol.converged:
            continue
        assert sol.energy_lhs <= sol.energy_rhs_bound + 1e-8, sol.diagnostics()
        assert sol.energy_gap <= 1e-7, sol.diagnostics()
