import numpy as np
import pytest

from flowlut import tensor as T
from flowlut import luts as L
from flowlut.errors import CubeParseError, ShapeError, SizeError

import oracles


def random_lut(seed, d=9):
    rng = np.random.default_rng(seed)
    table = rng.uniform(0.0, 1.0, size=(d, d, d, 3)).astype(np.float32)
    return L.Lut3D(size=d, table=T.Tensor(table, requires_grad=True), name="random")


def random_image(seed, h=6, w=5):
    return np.random.default_rng(seed).uniform(0, 1, (3, h, w)).astype(np.float32)


def kink_free_image(seed, d, h=3, w=3, margin=0.05):
    """Image whose coordinates sit well inside interpolation cells, so the
    h=1e-3 central differences never straddle a lattice plane or the clamp."""
    rng = np.random.default_rng(seed)
    cell = rng.integers(0, d - 1, size=(3, h, w))
    frac = rng.uniform(margin, 1.0 - margin, size=(3, h, w))
    return ((cell + frac) / (d - 1)).astype(np.float32)


class TestInit:
    def test_identity_center_point(self):
        bank = L.init_specialized_luts(8, 33)
        np.testing.assert_allclose(
            bank.luts[0].table.data[16, 16, 16], [0.5, 0.5, 0.5], atol=1e-7
        )

    def test_inversion_corner(self):
        bank = L.init_specialized_luts(8, 33)
        np.testing.assert_allclose(bank.luts[7].table.data[0, 0, 32], [1.0, 1.0, 0.0], atol=1e-7)

    def test_gamma_center(self):
        bank = L.init_specialized_luts(8, 33)
        want = 0.5**0.75
        np.testing.assert_allclose(
            bank.luts[1].table.data[16, 16, 16], [want] * 3, atol=1e-6
        )

    def test_all_priors_in_unit_range(self):
        bank = L.init_specialized_luts(8, 17)
        for lut in bank.luts:
            assert lut.table.data.min() >= 0.0
            assert lut.table.data.max() <= 1.0

    def test_extra_luts_are_identity(self):
        bank = L.init_specialized_luts(10, 5)
        np.testing.assert_array_equal(bank.luts[8].table.data, L.identity_lattice(5))
        assert bank.names[8] == "identity"
        assert bank.names[:8] == list(L.PRIOR_NAMES)

    def test_unspecialized_all_identity(self):
        bank = L.init_specialized_luts(4, 5, specialized=False)
        for lut in bank.luts:
            np.testing.assert_array_equal(lut.table.data, L.identity_lattice(5))

    def test_too_small_lattice(self):
        with pytest.raises(SizeError):
            L.init_specialized_luts(8, 1)

    def test_saturation_boosts_chroma(self):
        bank = L.init_specialized_luts(8, 17)
        sat = bank.luts[4].table.data
        # a red-ish lattice point gains saturation; grays stay put
        p = sat[12, 4, 4]
        assert p[0] - p.min() > (12 / 16 - 4 / 16) - 1e-6
        np.testing.assert_allclose(sat[8, 8, 8], [0.5, 0.5, 0.5], atol=1e-6)


class TestTrilinear:
    @pytest.mark.parametrize("d", [2, 9, 33])
    def test_identity_lut_reproduces_input(self, d):
        lut = L.Lut3D(size=d, table=T.Tensor(L.identity_lattice(d)), name="identity")
        img = random_image(0, 8, 8)
        out = L.trilinear_apply(lut, img).data
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_lattice_point_returns_stored_value(self):
        lut = random_lut(1, d=9)
        img = np.array([[[3 / 8]], [[5 / 8]], [[0 / 8]]], np.float32)
        out = L.trilinear_apply(lut, img).data[:, 0, 0]
        np.testing.assert_allclose(out, lut.table.data[3, 5, 0], atol=1e-6)

    def test_against_scalar_oracle(self):
        lut = random_lut(2, d=7)
        img = np.array([[[0.1]], [[0.7]], [[0.3]]], np.float32)
        out = L.trilinear_apply(lut, img).data[:, 0, 0]
        want = oracles.trilinear_point(lut.table.data, 7, (0.1, 0.7, 0.3))
        np.testing.assert_allclose(out, want, atol=1e-6)

    @pytest.mark.parametrize("seed", range(8))
    def test_random_images_match_oracle(self, seed):
        lut = random_lut(seed, d=5)
        img = random_image(seed + 50, 4, 4)
        out = L.trilinear_apply(lut, img).data
        want = oracles.trilinear_image_loops(lut.table.data, 5, img)
        np.testing.assert_allclose(out, want, atol=1e-6)

    def test_boundary_p_equals_one(self):
        lut = random_lut(3, d=5)
        img = np.ones((3, 1, 1), np.float32)
        out = L.trilinear_apply(lut, img).data[:, 0, 0]
        np.testing.assert_allclose(out, lut.table.data[4, 4, 4], atol=1e-6)

    def test_out_of_range_clamped(self):
        lut = random_lut(4, d=5)
        img = np.array([[[1.4]], [[-0.2]], [[0.5]]], np.float32)
        ref = np.array([[[1.0]], [[0.0]], [[0.5]]], np.float32)
        np.testing.assert_allclose(
            L.trilinear_apply(lut, img).data, L.trilinear_apply(lut, ref).data, atol=1e-7
        )

    def test_affine_lattice_exactness(self):
        # lattice storing an affine map is reproduced exactly by trilinear interp
        d = 9
        grid = L.identity_lattice(d).astype(np.float64)
        aff = 0.2 + 0.5 * grid[..., 0] + 0.2 * grid[..., 1] + 0.1 * grid[..., 2]
        table = np.stack([aff, 1.0 - 0.3 * aff, grid[..., 2]], axis=-1).astype(np.float32)
        lut = L.Lut3D(size=d, table=T.Tensor(table), name="affine")
        img = random_image(9, 5, 5)
        out = L.trilinear_apply(lut, img).data
        want0 = 0.2 + 0.5 * img[0] + 0.2 * img[1] + 0.1 * img[2]
        np.testing.assert_allclose(out[0], want0, atol=1e-5)
        np.testing.assert_allclose(out[1], 1.0 - 0.3 * want0, atol=1e-5)
        np.testing.assert_allclose(out[2], img[2], atol=1e-6)

    def test_inversion_twice_is_identity(self):
        bank = L.init_specialized_luts(8, 33)
        inv = bank.luts[7]
        img = random_image(11, 8, 8)
        once = L.trilinear_apply(inv, img).data
        twice = L.trilinear_apply(inv, once).data
        np.testing.assert_allclose(twice, img, atol=2e-6)


class TestBlend:
    def test_one_hot_identity(self):
        bank = L.init_specialized_luts(8, 17)
        w = np.zeros(8, np.float32)
        w[0] = 1.0
        img = random_image(5)
        out = L.blend_apply(bank, w, img).data
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_half_identity_half_inversion(self):
        bank = L.init_specialized_luts(8, 17)
        w = np.zeros(8, np.float32)
        w[0] = 0.5
        w[7] = 0.5
        img = random_image(6)
        out = L.blend_apply(bank, w, img).data
        np.testing.assert_allclose(out, np.full_like(img, 0.5), atol=1e-6)

    @pytest.mark.parametrize("seed", range(8))
    def test_compositional_oracle(self, seed):
        rng = np.random.default_rng(seed)
        d = 5
        luts = [random_lut(100 + seed * 8 + i, d) for i in range(8)]
        bank = L.LutBank(luts=luts)
        w = rng.dirichlet(np.ones(8)).astype(np.float32)
        img = random_image(seed + 30, 4, 4)
        got = L.blend_apply(bank, w, img).data
        want = np.zeros_like(img, dtype=np.float64)
        for wi, lut in zip(w, luts):
            want += np.float64(wi) * L.trilinear_apply(lut, img).data
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_convex_blend_stays_in_unit_range(self):
        bank = L.init_specialized_luts(8, 17)
        rng = np.random.default_rng(0)
        for _ in range(10):
            w = rng.dirichlet(np.ones(8)).astype(np.float32)
            img = random_image(rng.integers(1 << 30))
            out = L.blend_apply(bank, w, img).data
            assert out.min() >= -1e-6 and out.max() <= 1.0 + 1e-6

    def test_weight_length_mismatch(self):
        bank = L.init_specialized_luts(8, 5)
        with pytest.raises(ShapeError):
            L.blend_apply(bank, np.ones(4, np.float32) / 4, random_image(0))


class TestGradients:
    def test_lattice_and_image_fd(self):
        lut = random_lut(7, d=4)
        img = T.Tensor(kink_free_image(8, 4), requires_grad=True, name="img")
        tgt = random_image(9, 3, 3)

        def loss():
            return T.mse(L.trilinear_apply(lut, img), tgt)

        from test_tensor_ops import finite_diff_check
        finite_diff_check(loss, [lut.table, img])

    @pytest.mark.parametrize("seed", range(6))
    def test_blend_fd_weights_lattice_image(self, seed):
        rng = np.random.default_rng(seed)
        luts = [random_lut(300 + seed * 4 + i, 4) for i in range(3)]
        bank = L.LutBank(luts=luts)
        logits = T.Tensor(rng.uniform(-1, 1, 3).astype(np.float32),
                          requires_grad=True, name="logits")
        img = T.Tensor(kink_free_image(seed, 4), requires_grad=True, name="img")
        tgt = random_image(seed + 90, 3, 3)

        def loss():
            return T.mse(L.blend_apply(bank, T.softmax(logits), img), tgt)

        from test_tensor_ops import finite_diff_check
        finite_diff_check(loss, [logits, luts[0].table, luts[2].table, img])


class TestCubeIO:
    def test_identity_d2_line_order(self, tmp_path):
        lut = L.Lut3D(size=2, table=T.Tensor(L.identity_lattice(2)), name="identity")
        path = tmp_path / "id.cube"
        L.export_cube(lut, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "LUT_3D_SIZE 2"
        want = [
            "0.000000 0.000000 0.000000",
            "1.000000 0.000000 0.000000",
            "0.000000 1.000000 0.000000",
            "1.000000 1.000000 0.000000",
            "0.000000 0.000000 1.000000",
            "1.000000 0.000000 1.000000",
            "0.000000 1.000000 1.000000",
            "1.000000 1.000000 1.000000",
        ]
        assert lines[1:] == want

    def test_default_header_is_33(self, tmp_path):
        bank = L.init_specialized_luts(1, 33)
        path = tmp_path / "d33.cube"
        L.export_cube(bank.luts[0], path)
        assert path.read_text().splitlines()[0] == "LUT_3D_SIZE 33"

    @pytest.mark.parametrize("seed", range(3))
    def test_roundtrip(self, tmp_path, seed):
        lut = random_lut(seed, d=6)
        path = tmp_path / "rt.cube"
        L.export_cube(lut, path)
        back = L.import_cube(path)
        assert back.size == 6
        np.testing.assert_allclose(back.table.data, lut.table.data, atol=1e-6)

    def test_import_tolerates_comments_and_title(self, tmp_path):
        path = tmp_path / "c.cube"
        body = "\n".join(
            f"{v:.6f} {v:.6f} {v:.6f}" for v in [0.0, 1.0, 0.25, 0.5, 0.125, 0.75, 0.375, 1.0]
        )
        path.write_text(f'# a comment\nTITLE "test"\nLUT_3D_SIZE 2\n{body}\n')
        lut = L.import_cube(path)
        assert lut.size == 2
        assert lut.table.data[1, 0, 0, 0] == pytest.approx(1.0)

    def test_handwritten_fixture(self, tmp_path):
        path = tmp_path / "hand.cube"
        path.write_text(
            "LUT_3D_SIZE 2\n"
            "0.1 0.2 0.3\n" "0.4 0.5 0.6\n" "0.7 0.8 0.9\n" "0.15 0.25 0.35\n"
            "0.45 0.55 0.65\n" "0.75 0.85 0.95\n" "0.05 0.1 0.2\n" "0.3 0.6 0.9\n"
        )
        lut = L.import_cube(path)
        # r fastest: entry index 1 -> (r=1, g=0, b=0)
        np.testing.assert_allclose(lut.table.data[1, 0, 0], [0.4, 0.5, 0.6], atol=1e-7)
        np.testing.assert_allclose(lut.table.data[0, 1, 0], [0.7, 0.8, 0.9], atol=1e-7)
        np.testing.assert_allclose(lut.table.data[0, 0, 1], [0.45, 0.55, 0.65], atol=1e-7)

    def test_missing_size_header(self, tmp_path):
        path = tmp_path / "bad.cube"
        path.write_text("0.0 0.0 0.0\n" * 8)
        with pytest.raises(CubeParseError, match="LUT_3D_SIZE"):
            L.import_cube(path)

    def test_wrong_entry_count(self, tmp_path):
        path = tmp_path / "short.cube"
        path.write_text("LUT_3D_SIZE 2\n" + "0.0 0.0 0.0\n" * 7)
        with pytest.raises(CubeParseError, match="expected D\\^3"):
            L.import_cube(path)

    def test_non_numeric_token_names_line(self, tmp_path):
        path = tmp_path / "tok.cube"
        path.write_text("LUT_3D_SIZE 2\n0 0 0\n0 0 0\n0 zero 0\n" + "0 0 0\n" * 5)
        with pytest.raises(CubeParseError, match="line 4"):
            L.import_cube(path)
