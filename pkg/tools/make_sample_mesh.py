"""Regenerate the shipped sample mesh (a lumpy, asymmetric blob with a handle).

Run from the repository root: python3 tools/make_sample_mesh.py
Needs scikit-image, which the package itself does not import.
"""

import numpy as np
from skimage.measure import marching_cubes

from nbvkit.geometry import TriangleMesh, save_obj

N = 72


def field(x, y, z):
    # soft union of a few ellipsoids plus a ring, as a smooth-min of distances
    parts = [
        np.sqrt((x / 0.55) ** 2 + (y / 0.42) ** 2 + (z / 0.5) ** 2) - 1.0,
        np.sqrt(((x - 0.35) / 0.3) ** 2 + ((y + 0.2) / 0.28) ** 2 + ((z - 0.35) / 0.25) ** 2) - 1.0,
        np.sqrt(((x + 0.3) / 0.22) ** 2 + ((y - 0.25) / 0.3) ** 2 + ((z + 0.38) / 0.2) ** 2) - 1.0,
    ]
    # handle: torus in the xz plane off the +x side
    q = np.sqrt((x - 0.55) ** 2 + z ** 2) - 0.28
    parts.append((np.sqrt(q ** 2 + y ** 2) - 0.07) / 0.1)
    k = 8.0
    return -np.log(sum(np.exp(-k * p) for p in parts)) / k


def main(path="src/nbvkit/data/blob.obj"):
    g = np.linspace(-1.1, 1.1, N)
    x, y, z = np.meshgrid(g, g, g, indexing="ij")
    vol = field(x, y, z)
    vol[[0, -1], :, :] = vol[:, [0, -1], :] = 1.0
    vol[:, :, [0, -1]] = 1.0
    verts, faces, _, _ = marching_cubes(vol, 0.0, spacing=(g[1] - g[0],) * 3)
    mesh = TriangleMesh(verts + g[0], faces)
    assert mesh.watertight
    save_obj(mesh, path)
    print(path, len(mesh.faces), "faces, volume", round(mesh.volume, 4))


if __name__ == "__main__":
    main()
