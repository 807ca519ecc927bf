"""Regenerates reference.json from scikit-image and a NumPy port of pyefd.

Run from this directory: python3 gen_reference.py
"""
import json

import numpy as np
from skimage import measure


def random_mask(rng):
    h, w = rng.integers(24, 48, size=2)
    yy, xx = np.mgrid[0:h, 0:w]
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.3 * h, 0.7 * h), rng.uniform(0.3 * w, 0.7 * w)
        if rng.random() < 0.5:
            a, b = rng.uniform(3, 0.35 * h), rng.uniform(3, 0.35 * w)
            th = rng.uniform(0, np.pi)
            dy, dx = yy - cy, xx - cx
            u = dx * np.cos(th) + dy * np.sin(th)
            v = -dx * np.sin(th) + dy * np.cos(th)
            mask |= (u / b) ** 2 + (v / a) ** 2 <= 1
        else:
            hh, ww = rng.uniform(2, 0.3 * h), rng.uniform(2, 0.3 * w)
            mask |= (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= ww)
    lab = measure.label(mask, connectivity=1)
    sizes = np.bincount(lab.ravel())
    sizes[0] = 0
    return lab == np.argmax(sizes)


def rows(mask):
    return ["".join("#" if v else "." for v in r) for r in mask]


def shoelace(xy):
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def outline(mask):
    padded = np.pad(mask.astype(float), 1)
    contours = measure.find_contours(padded, 0.5)
    best = max(contours, key=lambda c: np.sum(np.linalg.norm(np.diff(c, axis=0), axis=1)))
    # (row, col) -> (x, y) = (col, row), drop the repeated closing point
    xy = best[:-1, ::-1] - 1.0
    return xy


def region(mask):
    props = measure.regionprops(mask.astype(np.uint8))[0]
    r0, c0, r1, c1 = props.bbox
    return {
        "area": float(props.area),
        "convex_area": float(props.area_convex),
        "perimeter": float(props.perimeter),
        "axis_major_length": float(props.axis_major_length),
        "axis_minor_length": float(props.axis_minor_length),
        "extent": float(props.extent),
        "eccentricity": float(props.eccentricity),
        "solidity": float(props.solidity),
        "feret_diameter_max": float(props.feret_diameter_max),
        "hu_moments": [float(v) for v in props.moments_hu],
        "bbox_width": float(c1 - c0),
        "bbox_height": float(r1 - r0),
    }


def efd(contour, order):
    dxy = np.diff(contour, axis=0)
    dt = np.sqrt((dxy**2).sum(axis=1))
    t = np.concatenate([[0.0], np.cumsum(dt)])
    T = t[-1]
    phi = (2 * np.pi * t) / T
    orders = np.arange(1, order + 1)
    consts = T / (2 * orders * orders * np.pi * np.pi)
    phi = phi * orders.reshape((order, -1))
    d_cos = np.cos(phi[:, 1:]) - np.cos(phi[:, :-1])
    d_sin = np.sin(phi[:, 1:]) - np.sin(phi[:, :-1])
    a = consts * np.sum((dxy[:, 0] / dt) * d_cos, axis=1)
    b = consts * np.sum((dxy[:, 0] / dt) * d_sin, axis=1)
    c = consts * np.sum((dxy[:, 1] / dt) * d_cos, axis=1)
    d = consts * np.sum((dxy[:, 1] / dt) * d_sin, axis=1)
    return np.stack([a, b, c, d], axis=1)


def normalize_efd(coeffs):
    coeffs = coeffs.copy()
    theta = 0.5 * np.arctan2(
        2 * (coeffs[0, 0] * coeffs[0, 1] + coeffs[0, 2] * coeffs[0, 3]),
        coeffs[0, 0] ** 2 - coeffs[0, 1] ** 2 + coeffs[0, 2] ** 2 - coeffs[0, 3] ** 2,
    )
    for n in range(1, coeffs.shape[0] + 1):
        m = np.array([[coeffs[n - 1, 0], coeffs[n - 1, 1]], [coeffs[n - 1, 2], coeffs[n - 1, 3]]])
        r = np.array([[np.cos(n * theta), -np.sin(n * theta)], [np.sin(n * theta), np.cos(n * theta)]])
        coeffs[n - 1, :] = (m @ r).flatten()
    psi = np.arctan2(coeffs[0, 2], coeffs[0, 0])
    pr = np.array([[np.cos(psi), np.sin(psi)], [-np.sin(psi), np.cos(psi)]])
    for n in range(1, coeffs.shape[0] + 1):
        m = np.array([[coeffs[n - 1, 0], coeffs[n - 1, 1]], [coeffs[n - 1, 2], coeffs[n - 1, 3]]])
        coeffs[n - 1, :] = (pr @ m).flatten()
    coeffs /= np.abs(coeffs[0, 0])
    # even harmonics carry a sign ambiguity (start at either end of the major axis)
    even = coeffs[1::2]
    if even.size and even.flat[np.argmax(np.abs(even))] < 0:
        coeffs[1::2] *= -1
    return coeffs


def efd_contour(rng, n=64):
    k = np.arange(n) / n * 2 * np.pi
    r = 1.0 + 0.25 * np.cos(2 * k + rng.uniform(0, 6)) + 0.1 * np.sin(3 * k + rng.uniform(0, 6))
    pts = np.stack([1.6 * r * np.cos(k), r * np.sin(k)], axis=1)
    return pts


def main():
    rng = np.random.default_rng(20240611)
    masks = [random_mask(rng) for _ in range(20)]
    out = {"masks": [], "outlines": [], "efd": []}
    for m in masks:
        out["masks"].append({"rows": rows(m), "props": region(m)})

    special = {
        "single_pixel": np.array([[1]], dtype=bool),
        "block3": np.ones((3, 3), dtype=bool),
        "mask0": masks[0],
        "mask1": masks[1],
        "mask2": masks[2],
    }
    for name, m in special.items():
        xy = outline(m)
        out["outlines"].append(
            {
                "name": name,
                "rows": rows(m),
                "vertices": xy.tolist(),
                "abs_area": float(abs(shoelace(xy))),
            }
        )

    for i in range(3):
        pts = efd_contour(rng)
        closed = np.vstack([pts, pts[:1]])
        raw = efd(closed, 30)
        out["efd"].append(
            {
                "points": pts.tolist(),
                "raw": raw.tolist(),
                "normalized": normalize_efd(raw).tolist(),
            }
        )

    with open("reference.json", "w") as f:
        json.dump(out, f)


if __name__ == "__main__":
    main()
