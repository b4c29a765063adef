"""Newton-Raphson load flow used as an independent check on the sweep solver.

Builds the bus admittance matrix from the case and solves the polar power
mismatch equations with an analytic Jacobian.  Shares no code with
``feederguard.powerflow``; only the case data types are common.
"""

from __future__ import annotations

import numpy as np


def ybus(case):
    idx = {b.id: i for i, b in enumerate(case.buses)}
    n = len(case.buses)
    z_base = case.v_base**2 / case.s_base
    y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        if not br.status:
            continue
        i, j = idx[br.from_bus], idx[br.to_bus]
        yb = 1.0 / (complex(br.r, br.x) / z_base)
        y[i, i] += yb
        y[j, j] += yb
        y[i, j] -= yb
        y[j, i] -= yb
    return y


def newton_raphson(case, tol=1e-12, max_iter=50):
    """Return (complex voltages, total loss kW, total loss kVAr, iterations)."""
    n = len(case.buses)
    kva = case.s_base * 1000.0
    slack = next(i for i, b in enumerate(case.buses) if b.is_slack)
    s_spec = np.zeros(n, dtype=complex)
    for i, b in enumerate(case.buses):
        s_spec[i] = -complex(b.p_load, b.q_load) / kva
    for u in case.dg_units:
        i = next(k for k, b in enumerate(case.buses) if b.id == u.bus)
        s_spec[i] += complex(u.p_dg, u.q_dg) / kva

    y = ybus(case)
    pq = np.array([i for i in range(n) if i != slack])
    vm = np.ones(n)
    va = np.zeros(n)
    vm[slack] = case.slack_voltage

    for it in range(1, max_iter + 1):
        v = vm * np.exp(1j * va)
        s_calc = v * np.conj(y @ v)
        mis = s_calc - s_spec
        f = np.concatenate([mis.real[pq], mis.imag[pq]])
        if np.max(np.abs(f)) < tol:
            break
        # dS/dVa and dS/dVm (polar form)
        ibus = y @ v
        diag_v = np.diag(v)
        diag_i = np.diag(ibus)
        diag_vn = np.diag(v / np.abs(v))
        ds_dva = 1j * diag_v @ np.conj(diag_i - y @ diag_v)
        ds_dvm = diag_v @ np.conj(y @ diag_vn) + np.conj(diag_i) @ diag_vn
        jac = np.block(
            [
                [ds_dva.real[np.ix_(pq, pq)], ds_dvm.real[np.ix_(pq, pq)]],
                [ds_dva.imag[np.ix_(pq, pq)], ds_dvm.imag[np.ix_(pq, pq)]],
            ]
        )
        dx = np.linalg.solve(jac, -f)
        m = len(pq)
        va[pq] += dx[:m]
        vm[pq] += dx[m:]
    else:
        raise RuntimeError("Newton-Raphson oracle did not converge")

    v = vm * np.exp(1j * va)
    s_slack = v[slack] * np.conj((y @ v)[slack])
    loss = (s_slack + s_spec.sum() - s_spec[slack]) * kva
    return v, loss.real, loss.imag, it
