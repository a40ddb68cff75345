import numpy as np
import pytest

from pmgflow import mesh as msh


class TestGenerateBox:
    def test_single_element(self):
        m = msh.generate_box(1, 1, 1.0, 1.0, periodic=False)
        assert m.n_elements == 1
        assert len(m.boundary_faces) == 4
        assert len(m.interior_faces) == 0

    def test_two_elements_one_interior_face(self):
        m = msh.generate_box(2, 1, 2.0, 1.0, periodic=False)
        assert m.n_elements == 2
        assert len(m.interior_faces) == 1
        eL, fL, eR, fR, rev = m.interior_faces[0]
        assert {(eL, fL), (eR, fR)} == {(0, 1), (1, 3)}
        assert rev == 1

    def test_periodic_4x4_face_count(self):
        # construction oracle: 2*4*3 internal + 4+4 periodic joins
        m = msh.generate_box(4, 4, 1.0, 1.0, periodic=True)
        assert len(m.interior_faces) == 32
        assert len(m.boundary_faces) == 0

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            msh.generate_box(0, 1, 1.0, 1.0)


class TestCylinderOmesh:
    def test_counting(self):
        m = msh.generate_cylinder_omesh(8, 2, 0.5, 10.0, 1.0)
        assert m.n_elements == 16
        tags = list(m.boundary_tags)
        assert tags.count("wall-adiabatic") == 8
        assert tags.count("far-field") == 8

    def test_uniform_spacing(self):
        assert np.isclose(msh.first_layer_height(10, 0.5, 10.5, 1.0), 1.0)

    def test_geometric_series_first_layer(self):
        s, n, span = 1.2, 10, 10.0
        h0 = msh.first_layer_height(n, 0.5, 10.5, s)
        assert np.isclose(h0, span * (s - 1) / (s**n - 1), rtol=1e-14)
        # layers sum back to the full span
        assert np.isclose(h0 * (s**n - 1) / (s - 1), span, rtol=1e-14)

    def test_wall_radius_realized(self):
        m = msh.generate_cylinder_omesh(16, 4, 0.5, 8.0, 1.3)
        r = np.sqrt((m.nodes**2).sum(axis=1))
        assert np.isclose(r.min(), 0.5)
        assert np.isclose(r.max(), 8.0)

    def test_closure_no_periodic_seams(self):
        m = msh.generate_cylinder_omesh(8, 3, 0.5, 5.0, 1.1)
        # every radial line of faces matched by node identity
        assert len(m.interior_faces) == 8 * 3 + 8 * 2

    def test_input_validation(self):
        with pytest.raises(ValueError):
            msh.generate_cylinder_omesh(7, 2, 0.5, 5.0, 1.0)
        with pytest.raises(ValueError):
            msh.generate_cylinder_omesh(8, 1, 0.5, 5.0, 1.0)
        with pytest.raises(ValueError):
            msh.generate_cylinder_omesh(8, 2, 5.0, 0.5, 1.0)
        with pytest.raises(ValueError):
            msh.generate_cylinder_omesh(8, 2, 0.5, 5.0, 0.9)


class TestTextFormat:
    UNIT_SQUARE = """\
pmgmesh 1
# a single unit square
nodes 4
0.0 0.0
1.0 0.0
1.0 1.0
0.0 1.0
elements 1
0 1 2 3
boundary far-field 4
0 0
0 1
0 2
0 3
"""

    def test_load_unit_square(self, tmp_path):
        path = tmp_path / "sq.msh"
        path.write_text(self.UNIT_SQUARE)
        m = msh.load_mesh(str(path))
        assert m.n_elements == 1
        assert len(m.boundary_faces) == 4

    def test_inverted_element_rejected(self, tmp_path):
        path = tmp_path / "bad.msh"
        path.write_text(self.UNIT_SQUARE.replace("0 1 2 3", "0 3 2 1"))
        with pytest.raises(msh.MeshError, match="element 0"):
            msh.load_mesh(str(path))

    def test_missing_node_rejected(self, tmp_path):
        path = tmp_path / "bad.msh"
        path.write_text(self.UNIT_SQUARE.replace("0 1 2 3", "0 1 2 9"))
        with pytest.raises(msh.MeshError, match="line"):
            msh.load_mesh(str(path))

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.msh"
        path.write_text("pmgmesh 2\nnodes 0\nelements 0\n")
        with pytest.raises(msh.MeshError, match="header"):
            msh.load_mesh(str(path))

    def test_untagged_boundary_rejected(self, tmp_path):
        path = tmp_path / "bad.msh"
        text = self.UNIT_SQUARE.replace("boundary far-field 4", "boundary far-field 3")
        text = "\n".join(text.splitlines()[:-1]) + "\n"
        path.write_text(text)
        with pytest.raises(msh.MeshError, match="no neighbor"):
            msh.load_mesh(str(path))

    def test_round_trip(self, tmp_path):
        m1 = msh.generate_cylinder_omesh(8, 2, 0.5, 5.0, 1.2)
        path = tmp_path / "cyl.msh"
        msh.save_mesh(m1, str(path))
        m2 = msh.load_mesh(str(path))
        assert np.array_equal(m1.nodes, m2.nodes)
        assert np.array_equal(m1.elements, m2.elements)
        assert np.array_equal(m1.interior_faces, m2.interior_faces)
        assert m1.boundary_tags == m2.boundary_tags


def all_test_meshes():
    return [
        msh.generate_box(3, 2, 2.0, 1.0),
        msh.generate_box(4, 4, 1.0, 1.0, periodic=True),
        msh.generate_cylinder_omesh(12, 4, 0.5, 6.0, 1.25),
    ]


class TestGeometry:
    @pytest.mark.parametrize("p", [1, 3])
    def test_positive_jacobians(self, p):
        for m in all_test_meshes():
            g = msh.element_geometry(m, p)
            assert (g.det > 0.0).all()
            assert (g.face_det > 0.0).all()

    def test_unit_normals(self):
        for m in all_test_meshes():
            g = msh.element_geometry(m, 2)
            norms = np.sqrt((g.face_normals**2).sum(axis=2))
            assert np.max(np.abs(norms - 1.0)) <= 1e-13

    def test_interior_normals_antiparallel(self):
        for m in all_test_meshes():
            g = msh.element_geometry(m, 1)
            for eL, fL, eR, fR, _ in m.interior_faces:
                nL = g.face_normals[eL, fL]
                nR = g.face_normals[eR, fR]
                # periodic joins are translates, so direction still flips
                assert np.allclose(nL, -nR, atol=1e-12)

    def test_discrete_closure(self):
        # sum of outward normal times edge measure vanishes per element
        for m in all_test_meshes():
            g = msh.element_geometry(m, 2)
            closed = (g.face_normals * (2.0 * g.face_jac)[..., None]).sum(axis=1)
            assert np.max(np.abs(closed)) <= 1e-12

    def test_affine_square_metrics(self):
        m = msh.generate_box(2, 2, 2.0, 2.0)
        g = msh.element_geometry(m, 3)
        assert np.allclose(g.det, 0.25)
        assert np.allclose(g.jac[..., 0, 0], 0.5)
        assert np.allclose(g.jac[..., 0, 1], 0.0)
        assert np.allclose(g.inv[..., 0, 0], 2.0)
        assert np.allclose(g.face_jac, 0.5)

    def test_h_min(self):
        m = msh.generate_box(4, 2, 2.0, 2.0)
        assert np.isclose(m.h_min, 0.5)
        g = msh.element_geometry(m, 1)
        assert np.allclose(g.h_min, 0.5)

    def test_negative_jacobian_named_element(self):
        nodes = [(0, 0), (1, 0), (1, 1), (0, 1)]
        with pytest.raises(msh.MeshError, match="element 0"):
            msh.build_mesh(nodes, [(0, 3, 2, 1)], {(0, f): "far-field" for f in range(4)})
