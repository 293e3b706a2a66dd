import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from jtsched import conic
from jtsched.conic import (INFEASIBLE, OPTIMAL, UNBOUNDED, Affine, ComplexVar, ConicBuilder,
                           ConicProblem, Tolerances, realify, realify_matrix)

BACKENDS = ["clarabel", "cvxopt"]


def ball_problem(center, radius, c):
    """min c @ x subject to ||x - center|| <= radius."""
    b = ConicBuilder()
    x = b.var(len(c), name="x")
    b.add_soc(radius, [Affine.var(x[i]) - center[i] for i in range(len(c))])
    b.minimize(Affine.combo(x, c))
    return b.build(), x


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_realify_matches_complex_inner_product(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=4) + 1j * rng.normal(size=4)
    x = rng.normal(size=4) + 1j * rng.normal(size=4)
    a, b = realify(c)
    xr = np.concatenate([x.real, x.imag])
    z = np.vdot(c, x)
    assert a @ xr == pytest.approx(z.real, abs=1e-12)
    assert b @ xr == pytest.approx(z.imag, abs=1e-12)
    A = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
    np.testing.assert_allclose(realify_matrix(A) @ xr, np.concatenate([(A @ x).real, (A @ x).imag]),
                               atol=1e-12)


def test_realify_of_real_vector_acts_on_real_part_only():
    a, b = realify(np.array([1.0, 2.0]))
    np.testing.assert_array_equal(a, [1, 2, 0, 0])
    np.testing.assert_array_equal(b, [0, 0, 1, 2])


def test_complex_var_round_trip():
    b = ConicBuilder()
    w = ComplexVar(b, 3)
    x = np.zeros(b.n)
    x[w.idx] = [1, 2, 3, 4, 5, 6]
    np.testing.assert_array_equal(w.value(x), [1 + 4j, 2 + 5j, 3 + 6j])
    re, im = w.inner(np.array([1j, 0, 0]))
    assert re.value(x) == 4.0 and im.value(x) == -1.0
    assert len(w.parts()) == 6 and len(w.parts([1])) == 2


@pytest.mark.parametrize("backend", BACKENDS)
def test_linear_bound(backend):
    b = ConicBuilder()
    x = b.var(name="x")
    b.add_le(3.0 - Affine.var(x))
    b.minimize(Affine.var(x))
    sol = conic.solve(b.build(), backend=backend)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(3.0, abs=1e-7)


@pytest.mark.parametrize("backend", BACKENDS)
def test_norm_of_ones(backend):
    b = ConicBuilder()
    t = b.var(name="t")
    b.add_soc(Affine.var(t), [1.0, 1.0])
    b.minimize(Affine.var(t))
    sol = conic.solve(b.build(), backend=backend)
    assert sol.ok and sol.objective == pytest.approx(np.sqrt(2), abs=1e-7)


def test_exponential_cone_log():
    b = ConicBuilder()
    t = b.var(name="t")
    b.add_exp(Affine.var(t), 1.0, 4.0)
    b.minimize(-Affine.var(t))
    sol = conic.solve(b.build())
    assert sol.ok and sol.x[t] == pytest.approx(np.log(4.0), abs=1e-7)


def test_cvxopt_rejects_exponential_cone():
    b = ConicBuilder()
    t = b.var()
    b.add_exp(Affine.var(t), 1.0, 4.0)
    b.minimize(-Affine.var(t))
    with pytest.raises(NotImplementedError):
        conic.solve(b.build(), backend="cvxopt")


@pytest.mark.parametrize("backend", BACKENDS)
def test_product_and_square_cones(backend):
    b = ConicBuilder()
    x = b.var(name="x")
    b.add_product_cone(Affine.var(x), 2.0, 8.0)
    b.minimize(-Affine.var(x))
    sol = conic.solve(b.build(), backend=backend)
    assert sol.ok and sol.x[x] == pytest.approx(4.0, abs=1e-6)
    b = ConicBuilder()
    t = b.var(name="t")
    b.add_square_epigraph(Affine(const=3.0), Affine.var(t))
    b.minimize(Affine.var(t))
    sol = conic.solve(b.build(), backend=backend)
    assert sol.ok and sol.objective == pytest.approx(4.5, abs=1e-6)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("seed", range(5))
def test_random_ball_socp_matches_closed_form(backend, seed):
    rng = np.random.default_rng(seed)
    center = rng.normal(size=5)
    radius = rng.uniform(0.5, 2.0)
    c = rng.normal(size=5)
    prob, x = ball_problem(center, radius, c)
    sol = conic.solve(prob, backend=backend)
    assert sol.ok
    expected = center - radius * c / np.linalg.norm(c)
    np.testing.assert_allclose(sol.x[x], expected, atol=1e-6)
    assert sol.objective == pytest.approx(c @ center - radius * np.linalg.norm(c), abs=1e-6)
    assert prob.residual(sol.x) <= 1e-7


@pytest.mark.parametrize("backend", BACKENDS)
def test_infeasible_status(backend):
    b = ConicBuilder()
    x = b.var(lb=1.0, ub=0.0)
    b.minimize(Affine.var(x))
    sol = conic.solve(b.build(), backend=backend)
    assert sol.status == INFEASIBLE and not sol.ok and sol.x is None


@pytest.mark.parametrize("backend", BACKENDS)
def test_unbounded_status(backend):
    b = ConicBuilder()
    x = b.var()
    b.add_le(Affine.var(x) - 1.0)
    b.minimize(Affine.var(x))
    sol = conic.solve(b.build(), backend=backend)
    assert sol.status == UNBOUNDED


def test_solution_is_deterministic():
    rng = np.random.default_rng(4)
    prob, _ = ball_problem(rng.normal(size=5), 1.0, rng.normal(size=5))
    a, b = conic.solve(prob), conic.solve(prob)
    np.testing.assert_array_equal(a.x, b.x)


def test_residual_measures_cone_violation():
    b = ConicBuilder()
    t = b.var()
    u = b.var()
    b.add_soc(Affine.var(t), [Affine.var(u)])
    prob = b.build()
    assert prob.residual([1.0, 3.0]) == pytest.approx(2.0)
    assert prob.residual([3.0, 1.0]) == 0.0


def test_check_rejects_shared_head_and_bad_blocks():
    n = 3
    base = dict(c=np.zeros(n), A_eq=sp.csr_matrix((0, n)), b_eq=np.zeros(0),
                A_ineq=sp.csr_matrix((0, n)), b_ineq=np.zeros(0),
                lb=np.full(n, -np.inf), ub=np.full(n, np.inf))
    with pytest.raises(ValueError):
        ConicProblem(**base, soc=((0, 1), (0, 2))).check()
    with pytest.raises(ValueError):
        ConicProblem(**base, soc=((0, 5),)).check()
    with pytest.raises(ValueError):
        ConicProblem(**base, exp=((0, 1),)).check()
    ConicProblem(**base, soc=((0, 1), (2, 1))).check()


def test_builder_gives_each_cone_its_own_head():
    b = ConicBuilder()
    t = b.var()
    b.add_soc(Affine.var(t), [1.0])
    b.add_soc(Affine.var(t), [2.0])
    b.minimize(Affine.var(t))
    prob = b.build()
    prob.check()
    assert conic.solve(prob).objective == pytest.approx(2.0, abs=1e-7)


def test_clarabel_and_cvxopt_agree(rng):
    for _ in range(3):
        prob, _ = ball_problem(rng.normal(size=5), rng.uniform(0.5, 2), rng.normal(size=5))
        a = conic.solve(prob, backend="clarabel")
        b = conic.solve(prob, backend="cvxopt")
        assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_dump_load_round_trip(tmp_path):
    b = ConicBuilder()
    x = b.var(3, lb=-2.0, ub=5.0)
    t = b.var()
    b.add_eq(Affine.var(x[0]) + Affine.var(x[1]) - 1.0)
    b.add_le(Affine.var(x[2]) - 0.5)
    b.add_soc(Affine.var(t), [Affine.var(x[0]), Affine.var(x[1])])
    b.add_exp(Affine.var(x[2]), 1.0, Affine.var(t) + 2.0)
    b.minimize(Affine.var(t) - Affine.var(x[2]) + 0.25)
    prob = b.build()
    path = tmp_path / "p.txt"
    prob.dump(path)
    back = ConicProblem.load(path)
    np.testing.assert_array_equal(back.c, prob.c)
    assert (back.A_eq != prob.A_eq).nnz == 0 and (back.A_ineq != prob.A_ineq).nnz == 0
    np.testing.assert_array_equal(back.b_eq, prob.b_eq)
    np.testing.assert_array_equal(back.lb, prob.lb)
    assert back.soc == prob.soc and back.exp == prob.exp and back.offset == prob.offset
    assert conic.solve(back).objective == pytest.approx(conic.solve(prob).objective, abs=1e-9)


def test_load_rejects_unknown_record(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("n 1\nbogus 1\n")
    with pytest.raises(ValueError):
        ConicProblem.load(p)


def test_relative_acceptance():
    tol = Tolerances(check=1e-7)
    assert tol.accepts(1.5e-7, np.array([5000.0]))
    assert not tol.accepts(1.5e-7, np.array([0.1]))


def test_unknown_backend_name():
    with pytest.raises(ValueError):
        conic.get_backend("mosek-ish")
