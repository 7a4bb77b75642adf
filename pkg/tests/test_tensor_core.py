"""
Unit Tests for the Matrix / Tape numerics

Covers forward values of every primitive, the reverse pass contract and
finite-difference checks of each gradient rule.
"""

import math
import os
import sys
import unittest

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import tensor_core as tc
from errors import ContractError, DimensionError, DomainError
from tensor_core import Matrix, Tape

PRIMITIVE_TOL = 1e-4
SEEDS = range(100)


def weighted_sum(out: Matrix, seed: int = 7) -> Matrix:
    """Scalar probe: sum of out ∘ R for a fixed random R"""
    r = np.random.default_rng(seed).normal(size=out.shape)
    return tc.reduce(tc.mul(out, Matrix(r)), "sum")


class TestForwardValues(unittest.TestCase):
    """Hand-computed forward results"""

    def test_matmul_identity(self):
        """I₂ × M returns M"""
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(tc.matmul(Matrix(np.eye(2)), Matrix(m)).value, m)

    def test_matmul_hand_example(self):
        """[[1,2],[3,4]] × [[0],[1]] = [[2],[4]]"""
        out = tc.matmul(Matrix([[1.0, 2.0], [3.0, 4.0]]), Matrix([[0.0], [1.0]]))
        np.testing.assert_array_equal(out.value, [[2.0], [4.0]])

    def test_matmul_zeros(self):
        """zeros(2,3) × anything(3,k) is zeros(2,k)"""
        out = tc.matmul(Matrix(np.zeros((2, 3))), Matrix(np.arange(12.0).reshape(3, 4)))
        np.testing.assert_array_equal(out.value, np.zeros((2, 4)))

    def test_matmul_shape_mismatch_names_shapes(self):
        """Mismatched inner dimensions raise DimensionError naming both shapes"""
        with self.assertRaises(DimensionError) as ctx:
            tc.matmul(Matrix(np.ones((2, 3))), Matrix(np.ones((2, 3))))
        self.assertIn("(2, 3) x (2, 3)", str(ctx.exception))

    def test_row_softmax_examples(self):
        """[s] -> [1], [0, 0] -> [0.5, 0.5], [0, ln 3] -> [0.25, 0.75]"""
        np.testing.assert_allclose(tc.row_softmax(Matrix([[3.7]])).value, [[1.0]])
        np.testing.assert_allclose(tc.row_softmax(Matrix([[0.0, 0.0]])).value, [[0.5, 0.5]])
        np.testing.assert_allclose(tc.row_softmax(Matrix([[0.0, math.log(3.0)]])).value, [[0.25, 0.75]],
                                   atol=1e-15)

    def test_row_softmax_large_logits_stay_finite(self):
        """Max subtraction keeps huge logits finite"""
        out = tc.row_softmax(Matrix([[1000.0, 1001.0]])).value
        self.assertTrue(np.all(np.isfinite(out)))
        self.assertAlmostEqual(out.sum(), 1.0, places=12)

    def test_row_softmax_empty_raises(self):
        """Empty input is a domain error"""
        with self.assertRaises(DomainError):
            tc.row_softmax(Matrix(np.zeros((0, 3))))

    def test_linear_examples(self):
        """Identity weights pass x through; zero x gives the bias rows; hand example gives 6"""
        x = Matrix([[1.0, -2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(tc.linear(x, Matrix(np.eye(2)), Matrix(np.zeros((1, 2)))).value, x.value)
        out = tc.linear(Matrix(np.zeros((3, 2))), Matrix(np.ones((2, 2))), Matrix([[5.0, 6.0]]))
        np.testing.assert_array_equal(out.value, [[5.0, 6.0]] * 3)
        out = tc.linear(Matrix([[1.0, 1.0]]), Matrix([[1.0], [2.0]]), Matrix([[3.0]]))
        np.testing.assert_array_equal(out.value, [[6.0]])

    def test_elementwise_examples(self):
        """relu, exp and square on hand values"""
        np.testing.assert_array_equal(tc.elementwise(Matrix([[-1.0, 2.0]]), "relu").value, [[0.0, 2.0]])
        np.testing.assert_array_equal(tc.elementwise(Matrix([[0.0]]), "exp").value, [[1.0]])
        np.testing.assert_array_equal(tc.elementwise(Matrix([[3.0]]), "square").value, [[9.0]])
        with self.assertRaises(DomainError):
            tc.elementwise(Matrix([[1.0]]), "tanh")

    def test_reduce_examples(self):
        """sum, max_over_rows and mean on hand values"""
        self.assertEqual(tc.reduce(Matrix([[1.0, 2.0, 3.0]]), "sum").item(), 6.0)
        np.testing.assert_array_equal(tc.reduce(Matrix([[1.0, 5.0], [4.0, 2.0]]), "max_over_rows").value,
                                      [[4.0, 5.0]])
        self.assertEqual(tc.reduce(Matrix(np.full((3, 4), 2.5)), "mean").item(), 2.5)

    def test_gram_is_exactly_symmetric(self):
        """Upper-triangle Gram is bitwise symmetric and matches x·xᵀ"""
        x = np.random.default_rng(0).normal(size=(9, 5))
        a = tc.gram(Matrix(x)).value
        np.testing.assert_array_equal(a, a.T)
        np.testing.assert_allclose(a, x @ x.T, rtol=1e-12, atol=1e-12)

    def test_max_over_segments(self):
        """Segment maxima pool consecutive row blocks"""
        x = Matrix([[1.0, 0.0], [3.0, -1.0], [0.0, 7.0], [2.0, 1.0]])
        np.testing.assert_array_equal(tc.max_over_segments(x, 2).value, [[3.0, 0.0], [2.0, 7.0]])
        with self.assertRaises(DimensionError):
            tc.max_over_segments(x, 3)

    def test_softmax_cross_entropy_uniform(self):
        """Equal logits give log(classes)"""
        loss = tc.softmax_cross_entropy(Matrix(np.zeros((3, 4))), [0, 1, 3])
        self.assertAlmostEqual(loss.item(), math.log(4.0), places=12)

    def test_constants_never_touch_a_tape(self):
        """Ops on constants produce untracked results"""
        out = tc.relu(tc.matmul(Matrix(np.ones((2, 2))), Matrix(np.ones((2, 2)))))
        self.assertIsNone(out.tape)
        self.assertFalse(out.requires_grad)

    def test_matrix_values_are_read_only(self):
        """Stored values cannot be mutated in place"""
        m = Matrix(np.ones((2, 2)))
        with self.assertRaises(ValueError):
            m.value[0, 0] = 3.0


class TestMacCounting(unittest.TestCase):
    """Multiply-accumulate counter"""

    def test_matmul_counts(self):
        """(2×3)·(3×4) is 24 MACs"""
        with tc.count_macs() as counter:
            tc.matmul(Matrix(np.ones((2, 3))), Matrix(np.ones((3, 4))))
        self.assertEqual(counter.total, 24)

    def test_gram_counts_upper_triangle(self):
        """Symmetric Gram charges n(n+1)/2·d, full Gram n²d"""
        x = Matrix(np.ones((6, 4)))
        with tc.count_macs() as counter:
            tc.gram(x, symmetric=True)
        self.assertEqual(counter.total, 6 * 7 // 2 * 4)
        with tc.count_macs() as counter:
            tc.gram(x, symmetric=False)
        self.assertEqual(counter.total, 6 * 6 * 4)

    def test_stages_split_totals(self):
        """Stage context attributes MACs to the named stage"""
        with tc.count_macs() as counter:
            with counter.stage("a"):
                tc.matmul(Matrix(np.ones((1, 2))), Matrix(np.ones((2, 1))))
            tc.matmul(Matrix(np.ones((1, 3))), Matrix(np.ones((3, 1))))
        self.assertEqual(counter.by_stage, {"a": 2, "unstaged": 3})
        self.assertIsNone(tc.active_counter())


class TestBackward(unittest.TestCase):
    """Reverse pass contract"""

    def test_sum_gradient_is_ones(self):
        """d sum(x) / dx = 1"""
        tape = Tape()
        x = tape.leaf(np.arange(6.0).reshape(2, 3), name="x")
        grads = tc.backward(tape, tc.reduce(x, "sum"))
        np.testing.assert_array_equal(grads["x"], np.ones((2, 3)))

    def test_square_sum_gradient(self):
        """d sum(x∘x) / dx at [1, 2] is [2, 4]"""
        tape = Tape()
        x = tape.leaf([[1.0, 2.0]], name="x")
        grads = tc.backward(tape, tc.reduce(tc.mul(x, x), "sum"))
        np.testing.assert_array_equal(grads["x"], [[2.0, 4.0]])

    def test_non_scalar_loss_rejected(self):
        """Backward needs a 1×1 loss"""
        tape = Tape()
        x = tape.leaf(np.ones((2, 2)))
        with self.assertRaises(ContractError):
            tc.backward(tape, tc.scale(x, 2.0))

    def test_foreign_loss_rejected(self):
        """A loss recorded on another tape is refused"""
        tape, other = Tape(), Tape()
        x = other.leaf(np.ones((1, 1)))
        with self.assertRaises(ContractError):
            tc.backward(tape, tc.scale(x, 2.0))

    def test_mixed_tapes_rejected(self):
        """Operands from two tapes cannot meet"""
        a, b = Tape().leaf(np.ones((1, 1))), Tape().leaf(np.ones((1, 1)))
        with self.assertRaises(ContractError):
            tc.add(a, b)

    def test_unreached_leaf_gets_zero_buffer(self):
        """Every leaf ends with a gradient of its own shape"""
        tape = Tape()
        x = tape.leaf(np.ones((2, 2)), name="x")
        unused = tape.leaf(np.ones((3, 1)), name="unused")
        grads = tc.backward(tape, tc.reduce(x, "sum"))
        np.testing.assert_array_equal(grads["unused"], np.zeros((3, 1)))
        self.assertEqual(unused.grad.shape, (3, 1))

    def test_backward_twice_does_not_accumulate(self):
        """Repeated backward on the same tape recomputes gradients from scratch"""
        tape = Tape()
        x = tape.leaf([[3.0]], name="x")
        loss = tc.square(x)
        tc.backward(tape, loss)
        grads = tc.backward(tape, loss)
        np.testing.assert_array_equal(grads["x"], [[6.0]])

    def test_max_tie_routes_to_lowest_index(self):
        """Tied maxima send the gradient to the first row"""
        tape = Tape()
        x = tape.leaf([[2.0], [2.0], [1.0]], name="x")
        grads = tc.backward(tape, tc.reduce(tc.reduce(x, "max_over_rows"), "sum"))
        np.testing.assert_array_equal(grads["x"], [[1.0], [0.0], [0.0]])

    def test_topological_order(self):
        """Operands of every node are leaves or earlier outputs"""
        tape = Tape()
        x = tape.leaf(np.ones((2, 2)))
        tc.reduce(tc.relu(tc.matmul(x, x)), "sum")
        produced = {id(leaf) for leaf in tape.leaves}
        for node in tape.nodes:
            for operand in node.operands:
                if operand.requires_grad:
                    self.assertIn(id(operand), produced)
            produced.add(id(node.output))


class TestGradientRules(unittest.TestCase):
    """Central finite-difference checks of each primitive over 100 seeds"""

    def check(self, f, x, tol=PRIMITIVE_TOL):
        self.assertLessEqual(tc.grad_check(f, x), tol)

    def over_seeds(self, case):
        for seed in SEEDS:
            with self.subTest(seed=seed):
                case(np.random.default_rng(seed))

    def test_linear_function_exact(self):
        """f = sum is checked to 1e-9"""
        self.over_seeds(lambda rng: self.check(lambda x: tc.reduce(x, "sum"), rng.normal(size=(3, 2)), tol=1e-9))

    def test_matmul_both_sides(self):
        """Gradients through both matmul operands"""
        def case(rng):
            b = Matrix(rng.normal(size=(4, 2)))
            a = Matrix(rng.normal(size=(3, 4)))
            self.check(lambda x: weighted_sum(tc.matmul(x, b)), rng.normal(size=(3, 4)))
            self.check(lambda x: weighted_sum(tc.matmul(a, x)), rng.normal(size=(4, 2)))
        self.over_seeds(case)

    def test_gram(self):
        """Symmetric and full Gram"""
        def case(rng):
            x = rng.normal(size=(5, 3))
            self.check(lambda v: weighted_sum(tc.gram(v, symmetric=True)), x)
            self.check(lambda v: weighted_sum(tc.gram(v, symmetric=False)), x)
        self.over_seeds(case)

    def test_composite_relu(self):
        """sum(relu(x·w)) away from the kink"""
        def case(rng):
            w = Matrix(rng.normal(size=(3, 4)))
            x = rng.normal(size=(5, 3))
            if np.abs(x @ w.value).min() < 1e-3:
                return
            self.check(lambda v: tc.reduce(tc.relu(tc.matmul(v, w)), "sum"), x)
        self.over_seeds(case)

    def test_pointwise(self):
        """exp, square, scale, shift, sub and divide"""
        def case(rng):
            x = rng.uniform(0.5, 1.5, size=(3, 3))
            other = Matrix(rng.normal(size=(3, 3)))
            self.check(lambda v: weighted_sum(tc.exp(v)), x)
            self.check(lambda v: weighted_sum(tc.square(v)), x)
            self.check(lambda v: weighted_sum(tc.shift(tc.scale(v, -2.0), 0.3)), x)
            self.check(lambda v: weighted_sum(tc.sub(other, v)), x)
            self.check(lambda v: weighted_sum(tc.divide(other, tc.reduce(v, "mean"))), x)
            self.check(lambda v: weighted_sum(tc.divide(v, Matrix([[0.7]]))), x)
        self.over_seeds(case)

    def test_row_softmax(self):
        self.over_seeds(lambda rng: self.check(lambda v: weighted_sum(tc.row_softmax(v)), rng.normal(size=(4, 5))))

    def test_layer_norm(self):
        """Input, gain and bias paths"""
        def case(rng):
            x = rng.normal(size=(4, 6))
            gain = Matrix(rng.normal(size=(1, 6)))
            bias = Matrix(rng.normal(size=(1, 6)))
            self.check(lambda v: weighted_sum(tc.layer_norm(v, gain, bias)), x)
            self.check(lambda g: weighted_sum(tc.layer_norm(Matrix(x), g, bias)), gain.value)
            self.check(lambda b: weighted_sum(tc.layer_norm(Matrix(x), gain, b)), bias.value)
        self.over_seeds(case)

    def test_reductions(self):
        """mean, max and min over rows with distinct entries"""
        def case(rng):
            x = rng.permutation(20).reshape(4, 5).astype(float)
            self.check(lambda v: weighted_sum(tc.reduce(v, "max_over_rows")), x)
            self.check(lambda v: weighted_sum(tc.reduce(v, "min_over_rows")), x)
            self.check(lambda v: tc.reduce(v, "mean"), x)
            self.check(lambda v: weighted_sum(tc.max_over_segments(v, 2)), x)
        self.over_seeds(case)

    def test_shape_plumbing(self):
        """reshape, concat_rows, transpose, gather and scatter"""
        idx = np.array([[2, 0], [1, 2], [0, 1], [2, 1]])

        def case(rng):
            x = rng.normal(size=(4, 3))
            self.check(lambda v: weighted_sum(tc.reshape(v, 2, 6)), x)
            self.check(lambda v: weighted_sum(tc.concat_rows([v, tc.scale(v, 2.0)])), x)
            self.check(lambda v: weighted_sum(tc.transpose(v)), x)
            self.check(lambda v: weighted_sum(tc.gather_cols(v, idx)), x)
            self.check(lambda v: weighted_sum(tc.scatter_cols(tc.gather_cols(v, idx), idx, 3)), x)
        self.over_seeds(case)

    def test_pairwise_sq_dist(self):
        """Both point sets receive gradients"""
        def case(rng):
            b = Matrix(rng.normal(size=(6, 3)))
            a = Matrix(rng.normal(size=(4, 3)))
            self.check(lambda v: weighted_sum(tc.pairwise_sq_dist(v, b)), rng.normal(size=(4, 3)))
            self.check(lambda v: weighted_sum(tc.pairwise_sq_dist(a, v)), rng.normal(size=(6, 3)))
        self.over_seeds(case)

    def test_softmax_cross_entropy(self):
        self.over_seeds(lambda rng: self.check(lambda v: tc.softmax_cross_entropy(v, [0, 2, 1]),
                                               rng.normal(size=(3, 4))))


class TestIdentities(unittest.TestCase):
    """Algebraic identities every primitive must respect"""

    def test_softmax_ignores_row_shift(self):
        """Adding a constant to a row leaves its softmax unchanged"""
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(4, 6))
            shift = rng.uniform(-50, 50, size=(4, 1))
            with self.subTest(seed=seed):
                np.testing.assert_allclose(tc.row_softmax(Matrix(x + shift)).value,
                                           tc.row_softmax(Matrix(x)).value, rtol=0, atol=1e-9)

    def test_identity_matmul_is_neutral(self):
        """(I·A)·B = A·B"""
        for seed in SEEDS:
            rng = np.random.default_rng(seed)
            a = Matrix(rng.normal(size=(4, 5)))
            b = Matrix(rng.normal(size=(5, 3)))
            with self.subTest(seed=seed):
                np.testing.assert_allclose(tc.matmul(tc.matmul(Matrix(np.eye(4)), a), b).value,
                                           tc.matmul(a, b).value, rtol=0, atol=1e-12)


class TestAdam(unittest.TestCase):
    """Adam optimizer"""

    def test_first_step_moves_by_learning_rate(self):
        """Bias correction makes the first step ≈ lr·sign(g)"""
        params = {"w": np.array([[1.0]])}
        opt = tc.Adam(params, lr=0.1)
        opt.step({"w": np.array([[2.0]])})
        self.assertAlmostEqual(params["w"][0, 0], 0.9, places=6)

    def test_updates_in_place(self):
        """The caller's arrays are updated, unknown names ignored"""
        w = np.zeros((2, 2))
        params = {"w": w}
        tc.Adam(params, lr=0.01).step({"w": np.ones((2, 2)), "other": np.ones(1)})
        self.assertTrue(np.all(w < 0))

    def test_minimizes_quadratic(self):
        """Repeated steps on (w − 3)² converge near 3"""
        params = {"w": np.array([[0.0]])}
        opt = tc.Adam(params, lr=0.1)
        for _ in range(500):
            opt.step({"w": 2.0 * (params["w"] - 3.0)})
        self.assertAlmostEqual(params["w"][0, 0], 3.0, delta=0.05)

    def test_non_positive_learning_rate(self):
        with self.assertRaises(DomainError):
            tc.Adam({"w": np.zeros(1)}, lr=0.0)


if __name__ == "__main__":
    unittest.main()
