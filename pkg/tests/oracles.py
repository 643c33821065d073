"""Independent numpy reference implementations used as test oracles.

Everything here is written directly against the documented conventions
(big-endian qubit order, phi = pi * theta_hat, rotation-then-entangler
layers, prefix angle slots) without importing any of the package's engine
code, so an engine bug cannot hide in its own oracle.
"""

import numpy as np

I2 = np.eye(2, dtype=complex)
H2 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PX = np.array([[0, 1], [1, 0]], dtype=complex)
PY = np.array([[0, -1j], [1j, 0]], dtype=complex)
PZ = np.array([[1, 0], [0, -1]], dtype=complex)
P0 = np.diag([1.0, 0.0]).astype(complex)
P1 = np.diag([0.0, 1.0]).astype(complex)


def kron_chain(ops):
    out = ops[0]
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def embed_1q(gate, q, n):
    ops = [I2] * n
    ops[q] = gate
    return kron_chain(ops)


def embed_controlled(gate, control, target, n):
    ops0 = [I2] * n
    ops1 = [I2] * n
    ops0[control] = P0
    ops1[control] = P1
    ops1[target] = gate
    return kron_chain(ops0) + kron_chain(ops1)


def rot_matrix(axis, theta_hat):
    phi = np.pi * theta_hat
    c, s = np.cos(phi / 2), np.sin(phi / 2)
    if axis == "rx":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if axis == "ry":
        return np.array([[c, -s], [s, c]])
    if axis == "rz":
        return np.array([[c - 1j * s, 0], [0, c + 1j * s]])
    raise ValueError(axis)


def entangler_pairs(entangler, n):
    if entangler == "linear_cnot":
        return [(q, q + 1) for q in range(n - 1)]
    if entangler == "ring_cnot":
        return [(q, q + 1) for q in range(n - 1)] + [(n - 1, 0)]
    if entangler == "crx_forward":
        return [(q, (q + 1) % n) for q in range(n)]
    if entangler == "crx_backward":
        return [(q, (q - 1 + n) % n) for q in range(n - 1, -1, -1)]
    raise ValueError(entangler)


def candidate_unitary(init, entangler, rotation, layers, n, angles):
    """Full dense unitary assembled gate by gate via kron embedding."""
    u = np.eye(2 ** n, dtype=complex)
    if init == "hadamard":
        for q in range(n):
            u = embed_1q(H2, q, n) @ u
    slot = 0
    parameterized = entangler.startswith("crx")
    for _ in range(layers):
        for q in range(n):
            u = embed_1q(rot_matrix(rotation, angles[slot]), q, n) @ u
            slot += 1
        for control, target in entangler_pairs(entangler, n):
            if parameterized:
                gate = rot_matrix("rx", angles[slot])
                slot += 1
            else:
                gate = PX
            u = embed_controlled(gate, control, target, n) @ u
    return u


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def pauli_vector(state, n):
    """[<X_q>, <Y_q>, <Z_q>] readout from a statevector, via dense observables."""
    out = []
    for pauli in (PX, PY, PZ):
        for q in range(n):
            obs = embed_1q(pauli, q, n)
            out.append(np.real(np.conj(state) @ obs @ state))
    return np.array(out)


def pipeline_logits(features, ts_spec, qff_spec, params, n, degree):
    """The whole fixed-architecture head, composed step by step with dense
    matrices: projection, per-timestep unitaries, explicit LCU matrix,
    explicit matrix polynomial, normalization, feed-forward conjugation,
    dense-observable readout, linear classifier.

    `params` is a dict of numpy arrays: proj_w, proj_b, attn_logits, phases,
    qsvt_coeffs, qff_raw, cls_w, cls_b. Specs are (init, entangler, rotation,
    layers) tuples.
    """
    n_seq = features.shape[0]
    dim = 2 ** n
    thetas = sigmoid(features @ params["proj_w"].T + params["proj_b"])
    unitaries = [candidate_unitary(*ts_spec, n, thetas[j]) for j in range(n_seq)]
    p = np.exp(params["attn_logits"] - params["attn_logits"].max())
    p = p / p.sum()
    m = sum(np.exp(1j * g) * w * u
            for g, w, u in zip(params["phases"], p, unitaries))
    poly = np.zeros((dim, dim), dtype=complex)
    for k, c in enumerate(params["qsvt_coeffs"]):
        poly += c * np.linalg.matrix_power(m, k)
    state = poly[:, 0]  # poly @ |0...0>
    state = state / np.linalg.norm(state)
    v = candidate_unitary(*qff_spec, n, sigmoid(params["qff_raw"]))
    state = v @ state
    feats = pauli_vector(state, n)
    return params["cls_w"] @ feats + params["cls_b"]


def naive_metrics(preds, labels, k):
    """O(n * K^2) reference: accuracy, macro F1, weighted F1, kappa,
    macro precision, macro recall — computed with explicit loops."""
    n = len(labels)
    conf = [[0] * k for _ in range(k)]
    for t, p in zip(labels, preds):
        conf[t][p] += 1
    correct = sum(conf[i][i] for i in range(k))
    accuracy = correct / n
    precs, recs, f1s, weights = [], [], [], []
    for i in range(k):
        col = sum(conf[r][i] for r in range(k))
        row = sum(conf[i][c] for c in range(k))
        prec = conf[i][i] / col if col else 0.0
        rec = conf[i][i] / row if row else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precs.append(prec)
        recs.append(rec)
        f1s.append(f1)
        weights.append(row / n)
    p_e = sum((sum(conf[i]) * sum(conf[r][i] for r in range(k))) for i in range(k)) / n ** 2
    if p_e >= 1.0:
        kappa = 1.0 if accuracy == 1.0 else 0.0
    else:
        kappa = (accuracy - p_e) / (1 - p_e)
    return {
        "accuracy": accuracy,
        "f1_macro": float(np.mean(f1s)),
        "f1_weighted": float(np.dot(weights, f1s)),
        "kappa": kappa,
        "precision": float(np.mean(precs)),
        "recall": float(np.mean(recs)),
    }
