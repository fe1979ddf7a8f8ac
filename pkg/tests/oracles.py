"""Independent reference computations shared by several test modules."""

import numpy as np

from lindlearn.learning import kraus_parameter_derivative, measurement_steps
from lindlearn.model import build_operators, operator_derivative
from lindlearn.propagator import adjoint_kraus_list, apply_kraus_list


def literal_gradient(theta, ds, sim):
    """Double sum over data points and steps, built from explicit Kraus lists only.

    grad_a = 1/(N_O N_T) sum_{k,n} r_kn sum_{m <= m_n} tr(A_k Phi^{m_n - m}(dPhi_a(rho_{m-1})))
    """
    ops = build_operators(ds.spec, theta)
    K = sim.kraus(ops)
    F = np.array(K.F)
    steps = measurement_steps(ds, sim.dt)
    M = int(steps[-1])
    rhos = [ds.rho0.astype(complex)]
    for _ in range(M):
        rhos.append(apply_kraus_list(F, rhos[-1]))
    r = np.array([[np.trace(A.op @ rhos[m]).real for m in steps] for A in ds.observables]) - ds.values
    grad = np.zeros(ds.spec.n_params)
    for a in range(ds.spec.n_params):
        dF = np.array(kraus_parameter_derivative(K, ops, operator_derivative(ds.spec, theta, a)))
        total = 0.0
        for k, A in enumerate(ds.observables):
            for n, mn in enumerate(steps):
                for m in range(1, int(mn) + 1):
                    B = A.op.astype(complex)
                    for _ in range(int(mn) - m):
                        B = adjoint_kraus_list(F, B)
                    rho = rhos[m - 1]
                    dK = np.einsum("jab,bc,jdc->ad", dF, rho, F.conj()) + np.einsum("jab,bc,jdc->ad", F, rho, dF.conj())
                    total += r[k, n] * np.trace(B @ dK).real
        grad[a] = total
    return grad / (ds.n_obs * ds.n_times)
