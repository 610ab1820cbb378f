"""
Text file formats for clouds, pencils, spectra and sample vectors

Floats are written with 17 significant digits so every value round-trips.
All writes go to a temporary file in the target directory and are renamed
into place.
"""

import os
import json
import logging
import tempfile
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import sparse

from pimspec.services.assembly import PimPencil
from pimspec.services.eigensolve import Spectrum
from pimspec.services.kernels import get_kernel
from pimspec.services.pointcloud import PointCloud
from pimspec.utils.error_handlers import ValidationError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '.17g'

PENCIL_HEADER = 'header.json'
PENCIL_A = 'A.txt'
PENCIL_B = 'B.txt'
PENCIL_CLOUD = 'cloud.csv'


def _fmt(value) -> str:
    return format(float(value), FLOAT_FORMAT)


def write_atomic(path: str, text: str):
    """Write ``text`` to ``path`` through a temporary file and rename"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', newline='') as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def write_json(path: str, payload: dict):
    write_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + '\n')


def read_json(path: str) -> dict:
    try:
        with open(path) as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {path}: {exc}")


def _read_csv(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, comment='#', dtype=float, float_precision='round_trip')
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}")
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ValidationError(f"malformed CSV {path}: {exc}")


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------

def format_cloud_csv(cloud: PointCloud) -> str:
    d = cloud.ambient_dim
    lines = [
        f'# intrinsic_dim={cloud.intrinsic_dim}',
        f'# manifold={cloud.manifold or ""}',
        f'# params={json.dumps(cloud.params, sort_keys=True)}',
        ','.join([f'x{i + 1}' for i in range(d)] + ['V', 'boundary']),
    ]
    for point, weight, flag in zip(cloud.points, cloud.weights, cloud.boundary):
        lines.append(','.join([_fmt(x) for x in point] + [_fmt(weight), '1' if flag else '0']))
    return '\n'.join(lines) + '\n'


def write_cloud_csv(cloud: PointCloud, path: str):
    write_atomic(path, format_cloud_csv(cloud))
    logger.info(f"Wrote cloud of {cloud.n} points to {path}")


def _read_metadata(path: str) -> Dict[str, str]:
    meta = {}
    with open(path) as handle:
        for line in handle:
            if not line.startswith('#'):
                break
            key, _, value = line[1:].strip().partition('=')
            meta[key.strip()] = value.strip()
    return meta


def read_cloud_csv(path: str) -> PointCloud:
    """Read a cloud CSV; the intrinsic dimension comes from its metadata line"""
    if not os.path.exists(path):
        raise ValidationError(f"file not found: {path}")
    meta = _read_metadata(path)
    frame = _read_csv(path)

    coords = [c for c in frame.columns if c.startswith('x')]
    if not coords or 'V' not in frame.columns:
        raise ValidationError(f"{path}: expected columns x1..xd and V")
    if 'intrinsic_dim' not in meta:
        raise ValidationError(f"{path}: missing '# intrinsic_dim=' metadata line")

    try:
        intrinsic_dim = int(meta['intrinsic_dim'])
        params = json.loads(meta.get('params') or '{}')
    except ValueError as exc:
        raise ValidationError(f"{path}: bad metadata: {exc}")

    boundary = frame['boundary'].to_numpy() > 0 if 'boundary' in frame.columns else None
    return PointCloud(
        frame[coords].to_numpy(),
        frame['V'].to_numpy(),
        intrinsic_dim,
        boundary,
        meta.get('manifold') or None,
        params,
    )


# ---------------------------------------------------------------------------
# Sample vectors and query points
# ---------------------------------------------------------------------------

def format_columns_csv(columns: Dict[str, Sequence[float]]) -> str:
    names = list(columns)
    arrays = [np.asarray(columns[name], dtype=float) for name in names]
    lines = [','.join(names)]
    for row in zip(*arrays):
        lines.append(','.join(_fmt(v) for v in row))
    return '\n'.join(lines) + '\n'


def write_columns_csv(path: str, columns: Dict[str, Sequence[float]]):
    write_atomic(path, format_columns_csv(columns))


def read_vector_csv(path: str, column: Optional[str] = None) -> np.ndarray:
    """One column of a CSV (the named one, or the only/first one)"""
    frame = _read_csv(path)
    if column is None:
        column = frame.columns[0]
    if column not in frame.columns:
        raise ValidationError(f"{path}: no column {column!r}")
    return frame[column].to_numpy()


def read_points_csv(path: str) -> np.ndarray:
    """Query points from the x1..xd columns of a CSV"""
    frame = _read_csv(path)
    coords = [c for c in frame.columns if c.startswith('x')]
    if not coords:
        raise ValidationError(f"{path}: expected columns x1..xd")
    return frame[coords].to_numpy()


# ---------------------------------------------------------------------------
# Pencils
# ---------------------------------------------------------------------------

def format_triplets(M) -> str:
    coo = sparse.csr_matrix(M).tocoo()
    order = np.lexsort((coo.col, coo.row))
    return ''.join(f'{coo.row[k]} {coo.col[k]} {_fmt(coo.data[k])}\n' for k in order)


def _read_triplets(path: str, n: int):
    if not os.path.exists(path):
        raise ValidationError(f"file not found: {path}")
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sparse.csr_matrix((n, n))
    if data.shape[1] != 3:
        raise ValidationError(f"{path}: expected 'row col value' triplets")
    M = sparse.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, n)).tocsr()
    M.sort_indices()
    return M


def write_pencil(pencil: PimPencil, directory: str, cloud_source: Optional[str] = None):
    """Pencil directory: JSON header, A and B triplet files and a copy of the cloud"""
    os.makedirs(directory, exist_ok=True)
    header = {
        'n': pencil.n,
        't': pencil.t,
        'kernel': pencil.kernel_id,
        'graph_mode': pencil.graph_mode,
        'jitter': pencil.jitter,
        'intrinsic_dim': pencil.cloud.intrinsic_dim,
        'cloud': PENCIL_CLOUD,
    }
    if cloud_source:
        header['cloud_source'] = cloud_source
    write_atomic(os.path.join(directory, PENCIL_A), format_triplets(pencil.A))
    write_atomic(os.path.join(directory, PENCIL_B), format_triplets(pencil.B))
    write_cloud_csv(pencil.cloud, os.path.join(directory, PENCIL_CLOUD))
    write_json(os.path.join(directory, PENCIL_HEADER), header)
    logger.info(f"Wrote pencil n={pencil.n} to {directory}")


def read_pencil(directory: str) -> PimPencil:
    header_path = os.path.join(directory, PENCIL_HEADER)
    if not os.path.isdir(directory) or not os.path.exists(header_path):
        raise ValidationError(f"not a pencil directory: {directory}")
    header = read_json(header_path)
    try:
        n = int(header['n'])
        t = float(header['t'])
        kernel = get_kernel(header['kernel'])
    except KeyError as exc:
        raise ValidationError(f"{header_path}: missing key {exc}")

    cloud = read_cloud_csv(os.path.join(directory, header.get('cloud', PENCIL_CLOUD)))
    if cloud.n != n:
        raise ValidationError(f"{directory}: header says n={n}, cloud has {cloud.n} points")

    return PimPencil(
        _read_triplets(os.path.join(directory, PENCIL_A), n),
        _read_triplets(os.path.join(directory, PENCIL_B), n),
        t,
        kernel,
        cloud,
        bool(header.get('graph_mode', False)),
        float(header.get('jitter', 0.0)),
    )


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

def vectors_path_for(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root + '.vectors.csv'


def write_spectrum(spectrum: Spectrum, path: str, pencil_dir: Optional[str] = None, with_vectors: bool = True):
    """Spectrum JSON plus an optional sidecar CSV with one column per mode

    The pencil and sidecar paths are stored relative to the JSON file.
    """
    base = os.path.dirname(os.path.abspath(path))
    payload = spectrum.to_dict()
    payload['pencil'] = os.path.relpath(os.path.abspath(pencil_dir), base) if pencil_dir else None
    payload['vectors'] = None

    if with_vectors:
        sidecar = vectors_path_for(path)
        write_columns_csv(sidecar, {f'mode{k}': spectrum.vectors[:, k] for k in range(spectrum.m)})
        payload['vectors'] = os.path.basename(sidecar)

    write_json(path, payload)
    logger.info(f"Wrote {spectrum.m} modes to {path}")


def read_spectrum(path: str):
    """Return (Spectrum, pencil directory or None)"""
    payload = read_json(path)
    base = os.path.dirname(os.path.abspath(path))
    try:
        mu = np.asarray(payload['mu'], dtype=float)
        residuals = np.asarray(payload['residuals'], dtype=float)
    except KeyError as exc:
        raise ValidationError(f"{path}: missing key {exc}")

    vectors = np.zeros((int(payload.get('n') or 0), 0))
    if payload.get('vectors'):
        frame = _read_csv(os.path.join(base, payload['vectors']))
        vectors = frame[[f'mode{k}' for k in range(mu.shape[0])]].to_numpy()

    spectrum = Spectrum(mu, vectors, residuals, payload.get('solver', 'dense'), payload.get('t'),
                        payload.get('kernel'), bool(payload.get('graph_mode', False)))
    pencil_dir = os.path.normpath(os.path.join(base, payload['pencil'])) if payload.get('pencil') else None
    return spectrum, pencil_dir
