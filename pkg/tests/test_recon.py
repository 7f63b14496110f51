import numpy as np
import pytest

from nlopnet import checks
from nlopnet.autodiff import chain, checkpoint, del_output, permute_outputs
from nlopnet.autodiff import linop as lo
from nlopnet.autodiff import ops
from nlopnet.nn.model import Model, connect, reorder
from nlopnet.optim import attach_loss
from nlopnet.recon import (BATCH, InverseNlop, ModlConfig, RBF, SolverError, VarNetConfig, adjoint_recon,
                           build_modl, build_sense, build_varnet, cg, cg_normal_solve, cg_sense, check_binary,
                           estimate_pattern, make_inverse_nlop, modl_step, normalize, normalize_kspace, param_count,
                           rbf_activation, rbf_centers, sense_adjoint, sense_forward, sense_normal, varnet_step)

from conftest import crand


def centered_dft_matrix(n):
    k = np.arange(n) - n // 2
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def unit_coils(rng, shape):
    """Coils with sum_c |C_c|^2 = 1 per pixel (one map set)."""
    c = crand(rng, shape)
    return c / np.sqrt((np.abs(c) ** 2).sum(axis=2, keepdims=True))


def random_pattern(rng, n, b=1, p=0.4):
    return (rng.random((n, n, 1, 1, b)) < p).astype(float)


def dense_sense(coils, pattern):
    """Dense matrix of P F C for one slice: rows (x, y, c), columns (x, y, m)."""
    nx, ny, nc, nm = coils.shape[:4]
    F = np.kron(centered_dft_matrix(nx), centered_dft_matrix(ny))
    blocks = np.zeros((nx * ny, nc, nx * ny, nm), dtype=complex)
    for c in range(nc):
        for m in range(nm):
            blocks[:, c, :, m] = F @ np.diag(coils[:, :, c, m, 0].ravel())
    blocks *= pattern[:, :, 0, 0, 0].reshape(-1, 1, 1, 1)
    return blocks.reshape(nx * ny * nc, nx * ny * nm)


def as_col(img):
    # (X, Y, 1, M, 1) -> columns ordered (x, y, m)
    return img[:, :, 0, :, 0].reshape(-1)


# -- SENSE ----------------------------------------------------------------------------


def test_single_unit_coil_is_unitary(rng):
    A = build_sense(np.ones((8, 6, 1, 1, 1)), np.ones((8, 6, 1, 1, 1)))
    x = crand(rng, (8, 6, 1, 1, 1))
    np.testing.assert_allclose(A.normal(x), x, atol=1e-13)
    np.testing.assert_allclose(adjoint_recon(A, A.forward(x)), x, atol=1e-13)


def test_normalized_coils_full_pattern_give_identity_normal(rng):
    A = build_sense(unit_coils(rng, (8, 8, 4, 1, 2)), np.ones((8, 8, 1, 1, 2)))
    x = crand(rng, (8, 8, 1, 1, 2))
    np.testing.assert_allclose(A.normal(x), x, atol=1e-12)


@pytest.mark.parametrize("maps", [1, 2])
def test_sense_dot_test_single_precision(maps, rng):
    A = build_sense(crand(rng, (8, 10, 3, maps, 2)), random_pattern(rng, 8, 2)[:, :1].repeat(10, axis=1))
    assert checks.dot_test(A, rng, probes=20) < 1e-4


def test_sense_two_map_sets_match_dense(rng):
    coils = crand(rng, (8, 8, 3, 2, 1))
    pattern = random_pattern(rng, 8)
    A = build_sense(coils, pattern)
    D = dense_sense(coils, pattern)
    x = crand(rng, (8, 8, 1, 2, 1))
    y = A.forward(x)
    np.testing.assert_allclose(y[:, :, :, 0, 0].reshape(-1, 3).ravel(), D @ as_col(x), atol=1e-12)
    k = crand(rng, (8, 8, 3, 1, 1))
    np.testing.assert_allclose(as_col(adjoint_recon(A, k)), D.conj().T @ k[:, :, :, 0, 0].ravel(), atol=1e-12)


def test_zero_second_map_set_reproduces_single(rng):
    coils = crand(rng, (8, 8, 3, 2, 1))
    pattern = random_pattern(rng, 8)
    x = crand(rng, (8, 8, 1, 2, 1))
    x[:, :, :, 1] = 0
    one = build_sense(coils[:, :, :, :1], pattern).forward(x[:, :, :, :1])
    two = build_sense(coils, pattern).forward(x)
    assert one.tobytes() == two.tobytes()


def test_zero_kspace_gives_zero_image(rng):
    A = build_sense(crand(rng, (4, 4, 2, 1, 1)), random_pattern(rng, 4))
    assert not A.adjoint(np.zeros((4, 4, 2, 1, 1), complex)).any()


def test_sense_errors(rng):
    with pytest.raises(ValueError):
        build_sense(crand(rng, (4, 4, 2, 1, 1)), np.full((4, 4, 1, 1, 1), 0.5))
    with pytest.raises(ValueError):
        build_sense(crand(rng, (4, 4, 2, 1, 1)), np.ones((3, 4, 1, 1, 1)))
    A = build_sense(crand(rng, (4, 4, 2, 1, 1)), np.ones((4, 4, 1, 1, 1)))
    with pytest.raises(ValueError):
        adjoint_recon(A, np.zeros((4, 4, 3, 1, 1)))
    with pytest.raises(ValueError):
        check_binary([0, 2])


def test_estimate_pattern():
    k = np.zeros((2, 2, 3, 1, 1), complex)
    k[0, 1, 2] = 1j
    p = estimate_pattern(k)
    assert p.shape == (2, 2, 1, 1, 1)
    np.testing.assert_array_equal(p[..., 0, 0, 0], [[0, 1], [0, 0]])


def test_sense_nlops_match_linop(rng):
    cs = (6, 6, 2, 2, 2)
    coils, pattern = crand(rng, cs), random_pattern(rng, 6, 2)
    A = build_sense(coils, pattern)
    x, k = crand(rng, (6, 6, 1, 2, 2)), crand(rng, (6, 6, 2, 1, 2))
    np.testing.assert_allclose(sense_forward(cs).eval(x, coils, pattern)[0], A.forward(x), atol=1e-12)
    np.testing.assert_allclose(sense_adjoint(cs).eval(k, coils, pattern)[0], A.adjoint(k), atol=1e-12)
    np.testing.assert_allclose(sense_normal(cs).eval(x, coils, pattern)[0], A.normal(x), atol=1e-12)


def test_sense_nlop_coil_derivative(rng):
    cs = (4, 4, 2, 1, 1)
    f = sense_normal(cs)
    xs = [crand(rng, (4, 4, 1, 1, 1)), crand(rng, cs), random_pattern(rng, 4).astype(complex)]
    for i in (0, 1):
        assert checks.fd_check(f, xs, 0, i, rng) < 1e-6


# -- conjugate gradients -------------------------------------------------------------------


def test_cg_zero_operator():
    b = np.array([2.0, -4j, 1 + 1j])
    x, info = cg_normal_solve(lo.zero((3,), (3,)), 2.0, b)
    np.testing.assert_allclose(x, b / 2, atol=1e-15)
    assert info["converged"] is False or info["residual"] == 0


def test_cg_unitary_plus_one(rng):
    A = build_sense(np.ones((4, 4, 1, 1, 1)), np.ones((4, 4, 1, 1, 1)))
    b = crand(rng, A.in_shape)
    x, _ = cg_normal_solve(A, 1.0, b)
    np.testing.assert_allclose(x, b / 2, atol=1e-14)


def test_cg_matches_direct_solve(rng):
    M = crand(rng, (16, 16))
    b = crand(rng, 16)
    lam = 0.1
    x, info = cg_normal_solve(lo.matrix(M), lam, b, max_iter=500, tol=1e-13)
    ref = np.linalg.solve(M.conj().T @ M + lam * np.eye(16), b)
    assert info["converged"]
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) <= 1e-5


def test_cg_batches_are_independent(rng):
    d = rng.random((3, 4)) + 0.5
    b = crand(rng, (3, 4))
    both, _ = cg(lambda v: d * v, b, max_iter=3, batch_axis=1)
    for j in range(4):
        one, _ = cg(lambda v: d[:, j] * v, b[:, j], max_iter=3)
        np.testing.assert_allclose(both[:, j], one, rtol=1e-13)


def test_cg_reports_iterations():
    x, info = cg(lambda v: 3 * v, np.ones(4), max_iter=10, tol=1e-12)
    assert info["iterations"] == 1 and info["converged"]
    np.testing.assert_allclose(x, 1 / 3)


def test_cg_breakdown_raises():
    with pytest.raises(SolverError):
        cg(lambda v: v * np.nan, np.ones(3))
    with pytest.raises(ValueError):
        cg_normal_solve(lo.identity((2,)), -1.0, np.ones(2))


# -- inverse operator -------------------------------------------------------------------------


def test_inverse_of_scaled_identity(rng):
    inv = make_inverse_nlop(ops.RealScale((5,)), max_iter=3)
    y, lam = crand(rng, 5), np.array([2.5 + 0j])
    x = inv.apply(y, lam)[0]
    np.testing.assert_allclose(x, y / 2.5, rtol=1e-14)
    np.testing.assert_allclose(inv.deriv(0, 1, np.array([1.0 + 0j])), -y / 2.5**2, rtol=1e-13)
    np.testing.assert_allclose(inv.deriv(0, 0, y), y / 2.5, rtol=1e-14)


def spd_family(rng, n=8):
    """``S(x, lam) = M x + Re(lam) x`` with Hermitian positive definite ``M``."""
    B = crand(rng, (n, n))
    M = B.conj().T @ B / n + np.eye(n)
    parts = [
        Model(ops.from_linop(lo.matrix(M)), ["x_m"], ["mx"]),
        Model(ops.RealScale((n,)), ["x_l", "lam"], ["lx"]),
        Model(ops.LinComb((n,), [1, 1]), ["mx", "lx"], ["y"]),
    ]
    S = reorder(connect(parts, share={"x": ["x_m", "x_l"]}), ["x", "lam"])
    return S.op, M


def test_inverse_derivatives_match_fd(rng):
    S, _ = spd_family(rng)
    inv = InverseNlop(S, max_iter=100, tol=1e-14)
    xs = [crand(rng, 8), np.array([0.7 + 0j])]
    for i in (0, 1):
        assert checks.fd_check(inv, xs, 0, i, rng) <= 1e-4
    inv.apply(*xs)
    for i in (0, 1):
        assert checks.real_transpose_test(inv, 0, i, rng) < 1e-10
    # adjoint lambda-derivative against finite differences of a real scalar
    loss = InverseNlop(S, max_iter=100, tol=1e-14)
    f = chain(chain(loss, ops.Abs2((8,))), ops.SumAll((8,)))
    assert checks.fd_gradient_check(f, xs, 1, rng, real=True) <= 1e-4


def test_inverse_undoes_operator(rng):
    S, M = spd_family(rng)
    inv = InverseNlop(S, max_iter=100, tol=1e-12)
    x, lam = crand(rng, 8), np.array([0.3 + 0j])
    y = S.eval(x, lam)[0]
    np.testing.assert_allclose(inv.eval(y, lam)[0], x, rtol=1e-9)


def test_inverse_strict_mode(rng):
    S, _ = spd_family(rng)
    inv = InverseNlop(S, max_iter=1, tol=1e-12, strict=True)
    with pytest.raises(SolverError) as e:
        inv.apply(crand(rng, 8), np.array([0.1 + 0j]))
    assert e.value.residual > 1e-12


def test_inverse_shape_error():
    with pytest.raises(ValueError):
        InverseNlop(ops.SumAll((3,)))


# -- RBF activation -------------------------------------------------------------------------


def test_rbf_zero_weights(rng):
    mu, s = rbf_centers(5)
    assert not rbf_activation(rng.standard_normal(10), np.zeros(5), mu, s).any()


def test_rbf_peak():
    assert rbf_activation(np.array([0.3]), np.array([2.0]), np.array([0.3]), 0.1)[0] == 2.0


def test_rbf_matches_direct_sum(rng):
    mu, s = rbf_centers(7)
    z, w = rng.standard_normal(20), rng.standard_normal(7)
    ref = [sum(w[j] * np.exp(-((zi - mu[j]) ** 2) / (2 * s * s)) for j in range(7)) for zi in z]
    np.testing.assert_allclose(rbf_activation(z, w, mu, s), ref, rtol=1e-13)


def test_rbf_centers_geometry():
    mu, s = rbf_centers(31)
    assert mu[0] == -1 and mu[-1] == 1 and s == pytest.approx(2 / 30)


def test_rbf_errors():
    with pytest.raises(ValueError):
        rbf_activation(np.zeros(2), np.ones(2), np.array([0.0, 1.0]), 0.0)
    with pytest.raises(ValueError):
        rbf_activation(np.zeros(2), np.ones(2), np.array([1.0, 0.0]), 1.0)
    with pytest.raises(ValueError):
        rbf_centers(1)


def test_rbf_nlop_matches_function_and_fd(rng):
    mu, s = rbf_centers(5)
    f = RBF((3, 2, 4), 1, mu, s)
    z = rng.standard_normal((3, 2, 4)).astype(complex)
    w = rng.standard_normal((2, 5)).astype(complex)
    out = f.apply(z, w)[0]
    for c in range(2):
        np.testing.assert_allclose(out[:, c].real, rbf_activation(z[:, c].real, w[c].real, mu, s), rtol=1e-13)
    for i in (0, 1):
        assert checks.fd_gradient_check(chain_sum(f, (3, 2, 4)), [z, w], i, rng, real=True) < 1e-6


def chain_sum(f, shape):
    return chain(f, ops.SumAll(shape))


# -- VarNet ----------------------------------------------------------------------------------


def small_problem(rng, n=16, coils=2, b=1, maps=1, full=False):
    cs = (n, n, coils, maps, b)
    c = unit_coils(rng, cs) if maps == 1 else crand(rng, cs)
    p = np.ones((n, n, 1, 1, b)) if full else random_pattern(rng, n, b, 0.5)
    x = crand(rng, (n, n, 1, maps, b))
    k = build_sense(c, p).forward(x)
    return cs, c, p, k


def step_values(step, rng, zero=False, lam=0.0):
    vals = {}
    for n in step.weight_names:
        shape = step.shape(n)
        if n.endswith(".lam"):
            vals[n] = np.full(shape, lam, complex)
        else:
            vals[n] = np.zeros(shape, complex) if zero else 0.3 * crand(rng, shape)
            if n.endswith(".rbf"):
                vals[n] = vals[n].real.astype(complex)
    return vals


def run_step(step, vals, x, adjy, c, p):
    data = {"x0": x, "t0.adjy": adjy, "t0.coils": c, "t0.pattern": p}
    return step.apply(data, vals)["x1"]


def test_varnet_step_identity_with_zero_weights(rng):
    cs, c, p, k = small_problem(rng)
    step = varnet_step(cs, VarNetConfig(T=1, filters=2, kernel=3, rbf=5))
    x = crand(rng, (16, 16, 1, 1, 1))
    adjy = build_sense(c, p).adjoint(k)
    np.testing.assert_array_equal(run_step(step, step_values(step, rng, zero=True), x, adjy, c, p), x)


def test_varnet_step_full_sampling_fixed_point(rng):
    cs, c, p, k = small_problem(rng, full=True)
    step = varnet_step(cs, VarNetConfig(T=1, filters=2, kernel=3, rbf=5))
    adjy = build_sense(c, p).adjoint(k)
    x = crand(rng, adjy.shape)
    out = run_step(step, step_values(step, rng, zero=True, lam=1.0), x, adjy, c, p)
    np.testing.assert_allclose(out, adjy, atol=1e-12)


def scripted_varnet_step(x, adjy, coils, pattern, w, wr, lam, mu, sigma):
    """Direct evaluation of one gradient step with zero-padded correlations."""
    nf, _, kh, kw = w.shape
    img = x[:, :, 0, 0, 0]
    lo_h, lo_w = (kh - 1) // 2, (kw - 1) // 2
    pad = np.pad(img, ((lo_h, kh - 1 - lo_h), (lo_w, kw - 1 - lo_w)))
    n0, n1 = img.shape
    reg_pad = np.zeros_like(pad)
    for f in range(nf):
        kx = np.zeros_like(img)
        for a in range(kh):
            for b in range(kw):
                kx += w[f, 0, a, b] * pad[a:a + n0, b:b + n1]
        z = kx.real
        phi = sum(wr[f, j].real * np.exp(-((z - mu[j]) ** 2) / (2 * sigma**2)) for j in range(len(mu)))
        for a in range(kh):
            for b in range(kw):
                reg_pad[a:a + n0, b:b + n1] += np.conj(w[f, 0, a, b]) * phi
    reg = reg_pad[lo_h:lo_h + n0, lo_w:lo_w + n1]
    F = lambda u: np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(u), norm="ortho"))
    Fi = lambda u: np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(u), norm="ortho"))
    ahax = np.zeros_like(img)
    for ci in range(coils.shape[2]):
        cm = coils[:, :, ci, 0, 0]
        ahax += np.conj(cm) * Fi(pattern[:, :, 0, 0, 0] * F(cm * img))
    out = img - reg - lam * (ahax - adjy[:, :, 0, 0, 0])
    return out[:, :, None, None, None]


def test_varnet_step_matches_scripted_formula(rng):
    cs, c, p, k = small_problem(rng)
    cfg = VarNetConfig(T=1, filters=3, kernel=3, rbf=5)
    step = varnet_step(cs, cfg)
    vals = step_values(step, rng, lam=0.7)
    adjy = build_sense(c, p).adjoint(k)
    x = crand(rng, adjy.shape)
    mu, sigma = rbf_centers(5)
    ref = scripted_varnet_step(x, adjy, c, p, vals["t0.conv"], vals["t0.rbf"], 0.7, mu, sigma)
    np.testing.assert_allclose(run_step(step, vals, x, adjy, c, p), ref, atol=1e-12)


def test_varnet_updates_only_first_map_set(rng):
    cs, c, p, k = small_problem(rng, n=8, maps=2)
    step = varnet_step(cs, VarNetConfig(T=1, filters=2, kernel=3, rbf=5))
    vals = step_values(step, rng)
    x = crand(rng, (8, 8, 1, 2, 1))
    out = run_step(step, vals, x, np.zeros_like(x), c, p * 0)
    np.testing.assert_array_equal(out[:, :, :, 1], x[:, :, :, 1])
    assert not np.allclose(out[:, :, :, 0], x[:, :, :, 0])


def test_varnet_parameter_count():
    assert param_count(VarNetConfig()) == 65530
    assert 24 * 11 * 11 * 2 * 10 + 24 * 31 * 10 + 10 == 65530
    assert build_varnet((16, 16, 2, 1, 1)).num_params() == 65530


def test_varnet_lambda_projection():
    net = build_varnet((8, 8, 1, 1, 1), VarNetConfig(T=2, filters=2, kernel=3, rbf=5))
    prox = net.prox["t1.lam"]
    np.testing.assert_array_equal(prox(np.array([-0.5, 0.2])), [0, 0.2])


def test_varnet_config_validation():
    with pytest.raises(ValueError):
        build_varnet((8, 8, 1, 1, 1), VarNetConfig(T=0))
    with pytest.raises(ValueError):
        build_varnet((8, 8, 1, 1, 1), VarNetConfig(rbf=1))


def gradient_check_all_weights(net, data, rng, seed=3):
    net.initialize(seed)
    loss = attach_loss(net, "mse", output="image", reference="reference")
    vals = {n: v for n, v in net.values.items()}
    for n in loss.weight_names:
        # move off the initialization so zero-initialized weights get nontrivial gradients
        vals[n] = vals[n] + 0.05 * (crand(rng, vals[n].shape).real if n in loss.real else crand(rng, vals[n].shape))
    xs = loss.args(data, vals)
    f = loss.op
    li = loss.out_index("loss")
    if li != 0 or f.num_outputs != 1:
        f = permute_outputs(f, [li] + [o for o in range(f.num_outputs) if o != li])
        while f.num_outputs > 1:
            f = del_output(f, 1)
    worst = {}
    for n in loss.weight_names:
        worst[n] = checks.fd_gradient_check(f, xs, loss.in_index(n), rng, directions=2, real=n in loss.real)
    return worst


def test_varnet_gradients_match_fd(rng):
    cs, c, p, k = small_problem(rng, n=16, b=2)
    net = build_varnet(cs, VarNetConfig(T=2, filters=2, kernel=3, rbf=5))
    ref = crand(rng, (16, 16, 1, 1, 2))
    worst = gradient_check_all_weights(net, {"kspace": k, "coils": c, "pattern": p, "reference": ref}, rng)
    assert len(worst) == 6
    assert max(worst.values()) <= 1e-4, worst


# -- MoDL ------------------------------------------------------------------------------------


def modl_data(step, x, adjy, c, p):
    return {"x0": x, "t0.adjy": adjy, "t0.coils": c, "t0.pattern": p}


def test_modl_zero_denoiser_gives_regularized_solution(rng):
    cs, c, p, k = small_problem(rng, n=8)
    cfg = ModlConfig(T=1, layers=2, filters=4, residual=False, cg_iter=10)
    step = modl_step(cs, cfg).initialize(0)
    for n in step.weight_names:
        if "conv" in n:
            step.values[n] = np.zeros_like(step.values[n])
    A = build_sense(c, p)
    adjy = A.adjoint(k)
    out = step.apply(modl_data(step, crand(rng, adjy.shape), adjy, c, p))["x1"]
    ref, _ = cg_normal_solve(A, 0.05, adjy, max_iter=10, batch_axis=BATCH)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_modl_data_consistency_fixed_point(rng):
    cs, c, p, k = small_problem(rng, n=8)
    A = build_sense(c, p)
    x = crand(rng, (8, 8, 1, 1, 1))
    y = A.forward(x)
    # zero-weight residual denoiser is the identity, so x is a fixed point
    step = modl_step(cs, ModlConfig(T=1, layers=2, filters=4, cg_iter=200, cg_tol=1e-12)).initialize(0)
    for n in step.weight_names:
        if "conv" in n:
            step.values[n] = np.zeros_like(step.values[n])
    out = step.apply(modl_data(step, x, A.adjoint(y), c, p))["x1"]
    np.testing.assert_allclose(out, x, atol=1e-8)


def test_modl_shares_weights_across_iterations():
    net = build_modl((8, 8, 2, 1, 1), ModlConfig(T=3, layers=2, filters=4))
    assert set(net.weight_names) == {"conv0", "conv1", "bn0.gamma", "bn0.beta", "rho"}
    assert set(net.stat_names) == {f"t{t}.bn0.{s}" for t in range(3) for s in ("mean", "var")}
    assert net.real == {"rho"}


def test_modl_initial_lambda():
    net = build_modl((8, 8, 1, 1, 1), ModlConfig(T=1, layers=2, filters=2)).initialize(0)
    assert np.exp(net.values["rho"].real[0]) == pytest.approx(0.05)


def test_modl_gradients_match_fd(rng):
    cs, c, p, k = small_problem(rng, n=16, b=2)
    # implicit derivatives are exact only at a converged solve
    net = build_modl(cs, ModlConfig(T=2, layers=2, filters=4, cg_iter=200, cg_tol=1e-13))
    ref = crand(rng, (16, 16, 1, 1, 2))
    worst = gradient_check_all_weights(net, {"kspace": k, "coils": c, "pattern": p, "reference": ref}, rng)
    assert len(worst) == 5
    assert max(worst.values()) <= 1e-4, worst


def test_modl_infer_mode_reads_statistics(rng):
    cs, c, p, k = small_problem(rng, n=8)
    cfg = ModlConfig(T=1, layers=2, filters=2)
    net = build_modl(cs, cfg, mode="infer").initialize(0)
    assert net.outputs == ["image"]
    out = net.apply({"kspace": k, "coils": c, "pattern": p})["image"]
    assert out.shape == (8, 8, 1, 1, 1) and np.all(np.isfinite(out))


def test_cg_sense_baseline(rng):
    cs, c, p, k = small_problem(rng, n=8, b=2)
    img, info = cg_sense(k, c, p, 0.01, max_iter=5)
    A = build_sense(c, p)
    ref, _ = cg_normal_solve(A, 0.01, A.adjoint(k), 5, batch_axis=BATCH)
    np.testing.assert_array_equal(img, ref)
    assert info["iterations"] == 5


# -- checkpointing ------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["varnet", "modl"])
def test_checkpointed_network_gradients_bitwise(kind, rng):
    cs, c, p, k = small_problem(rng, n=8, b=2)
    data = {"kspace": k, "coils": c, "pattern": p, "reference": crand(rng, (8, 8, 1, 1, 2))}
    grads = []
    for ck in (False, True):
        if kind == "varnet":
            net = build_varnet(cs, VarNetConfig(T=2, filters=2, kernel=3, rbf=5, checkpoint=ck))
        else:
            net = build_modl(cs, ModlConfig(T=2, layers=2, filters=2, cg_iter=3, checkpoint=ck))
        loss = attach_loss(net.initialize(4), "mse", output="image", reference="reference")
        xs = loss.args(data)
        out = loss.op.apply(*xs)
        li = loss.out_index("loss")
        g = loss.op.backward({li: np.ones_like(out[li])}, [loss.in_index(n) for n in loss.weight_names])
        grads.append(g)
    assert grads[0].keys() == grads[1].keys()
    for i in grads[0]:
        assert grads[0][i].tobytes() == grads[1][i].tobytes()


def test_checkpoint_wrapper_preserves_step(rng):
    cs, c, p, k = small_problem(rng, n=8)
    cfg = VarNetConfig(T=1, filters=2, kernel=3, rbf=5)
    step = varnet_step(cs, cfg)
    wrapped = step.map_op(checkpoint)
    vals = step_values(step, rng, lam=0.5)
    adjy = build_sense(c, p).adjoint(k)
    x = crand(rng, adjy.shape)
    assert run_step(step, vals, x, adjy, c, p).tobytes() == run_step(wrapped, vals, x, adjy, c, p).tobytes()


# -- normalization ----------------------------------------------------------------------------


def test_normalize_scale():
    x0 = np.array([1.0, -4.0, 2j])
    s, y = normalize(x0, np.array([8.0]))
    assert s == 0.25 and y[0] == 2.0
    s, _ = normalize(x0 / 4, np.ones(1))
    assert s == 1.0


def test_normalize_all_zero():
    with pytest.raises(ValueError):
        normalize(np.zeros(3), np.zeros(3))


def test_normalize_per_slice(rng):
    x0 = np.zeros((2, 2, 1, 1, 2), complex)
    x0[0, 0, 0, 0] = [2.0, 5.0]
    s, _ = normalize(x0, np.ones((2, 2, 1, 1, 2)), batch_axis=BATCH)
    np.testing.assert_allclose(s.ravel(), [0.5, 0.2])


def test_normalization_is_transparent_for_linear_network(rng):
    # a linear network: CG-SENSE with fixed lambda and iterations
    cs, c, p, k = small_problem(rng, n=8, b=2)
    k = 37.0 * k
    plain, _ = cg_sense(k, c, p, 0.01, 6)
    scale, ks = normalize_kspace(k, c, p)
    scaled, _ = cg_sense(ks, c, p, 0.01, 6)
    np.testing.assert_allclose(scaled / scale, plain, rtol=1e-10, atol=1e-12)
    x0 = build_sense(c, p).adjoint(ks)
    np.testing.assert_allclose(np.abs(x0).max(axis=(0, 1, 2, 3)), 1.0, rtol=1e-12)
