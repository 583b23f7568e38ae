"""Smoke test for the `cgail` extension module.

Run after `maturin develop -m crates/py/Cargo.toml`, or with the directory
holding a built `cgail.so` on PYTHONPATH.
"""

import math

import cgail


def main():
    mdp, expert = cgail.fixture("two_corridor")
    assert (mdp.n_states, mdp.n_actions) == (5, 2)

    rho = cgail.solve_occupancy(mdp, expert)
    assert abs(sum(rho) - 1.0 / (1.0 - mdp.gamma)) < 1e-9

    d_max, p_max = cgail.desired_state_report(mdp, expert, 0.0)
    assert d_max < 1e-10 and p_max < 1e-10, (d_max, p_max)

    params = cgail.ScalarSystemParams(1.0, 1.0, 0.5, k=1.0, alpha=0.0)
    info = cgail.jacobian(params)
    assert info["eig_stable"] and info["assumption_holds"]
    traj = cgail.integrate(params, 0.55, 0.45, steps=20000, dt=0.001)
    t, x, y = traj[-1]
    assert math.hypot(x - 0.5, y - 0.5) < 1e-6, (x, y)

    w = cgail.wasserstein([0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    assert abs(w - 1.0) < 1e-12

    try:
        cgail.PolicyTable([[0.7, 0.7]])
    except ValueError:
        pass
    else:
        raise AssertionError("non-stochastic policy accepted")

    config = cgail.TrainConfig(iterations=20, n_traj_per_iter=4, wasserstein_traj=10, seed=3)
    a = cgail.train(mdp, expert, config)
    b = cgail.train(mdp, expert, config)
    assert len(a) == 20 and a.to_csv() == b.to_csv()
    ret = a.column("normalized_return")
    print(f"smoke ok: {len(a)} iterations, final normalized return {ret[-1]:.4f}")


if __name__ == "__main__":
    main()
