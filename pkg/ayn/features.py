"""
Precomputed image features: one fixed-length vector per image id.

Two on-disk layouts:

* TSV: ``image_id<TAB>f1,f2,...`` per line.
* Binary: magic ``AYNF``, u32 count, u32 dim (little-endian), then per
  record a u16 id length, the utf-8 id and `dim` little-endian float32s.
"""

__all__ = [
    'FEATURE_FORMATS', 'VisualFeatureStore', 'load_features', 'write_features',
    'load_features_tsv', 'load_features_binary', 'write_features_tsv',
    'write_features_binary', 'guess_format']

import logging
import struct
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from .errors import FormatError, ShapeError

logger = logging.getLogger(__name__)

FEATURE_FORMATS = ('tsv', 'raw-binary')
MAGIC = b'AYNF'
_HEADER = struct.Struct('<4sII')
_ID_LEN = struct.Struct('<H')


class VisualFeatureStore:
    """
    Immutable image id -> feature vector map with one declared dimension.
    """
    def __init__(self, vectors: Mapping[str, np.ndarray], dim: Optional[int] = None):
        vectors = {
            str(image): np.asarray(vec, dtype=np.float64)
            for image, vec in vectors.items()}
        if dim is None:
            if not vectors:
                raise ValueError('Cannot infer the dimension of an empty feature store')
            dim = next(iter(vectors.values())).shape[-1]
        for image, vec in vectors.items():
            if vec.shape != (dim,):
                raise ShapeError(
                    f'Feature vector for {image} has shape {vec.shape}, '
                    f'expected ({dim},)', image=image)
            if not np.all(np.isfinite(vec)):
                raise FormatError(f'Non-finite feature value for {image}')
            vec.setflags(write=False)
        self.dim = int(dim)
        self._vectors = vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, image: str) -> bool:
        return image in self._vectors

    def __getitem__(self, image: str) -> np.ndarray:
        return self._vectors[image]

    def __iter__(self):
        return iter(self._vectors)

    def get(self, image: str, default=None):
        return self._vectors.get(image, default)

    def items(self):
        return self._vectors.items()


def load_features_tsv(path) -> VisualFeatureStore:
    path = str(path)
    try:
        df = pd.read_csv(
            path, sep='\t', header=None, names=['image', 'values'],
            dtype={'image': 'string', 'values': 'string'}, engine='pyarrow')
    except Exception as e:
        raise FormatError(f'cannot parse feature TSV: {e}', path=path) from e
    vectors = {}
    dim = None
    for row, (image, values) in enumerate(zip(df['image'], df['values']), start=1):
        if pd.isna(image) or pd.isna(values):
            raise FormatError('expected image_id<TAB>f1,f2,...', path=path, line=row)
        try:
            vec = np.array([float(v) for v in str(values).split(',')])
        except ValueError as e:
            raise FormatError(f'bad feature value: {e}', path=path, line=row) from e
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise FormatError(
                f'dimension {vec.shape[0]} differs from {dim}', path=path, line=row)
        vectors[str(image)] = vec
    if not vectors:
        raise FormatError('no feature vectors', path=path)
    return VisualFeatureStore(vectors, dim)


def load_features_binary(path) -> VisualFeatureStore:
    path = str(path)
    with open(path, 'rb') as f:
        buf = f.read()
    if len(buf) < _HEADER.size:
        raise FormatError('truncated header', path=path)
    magic, count, dim = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f'bad magic {magic!r}', path=path)
    offset = _HEADER.size
    vectors = {}
    value_bytes = 4 * dim
    for record in range(count):
        if offset + _ID_LEN.size > len(buf):
            raise FormatError(f'truncated record {record}', path=path)
        (id_len,) = _ID_LEN.unpack_from(buf, offset)
        offset += _ID_LEN.size
        end = offset + id_len + value_bytes
        if end > len(buf):
            raise FormatError(f'truncated record {record}', path=path)
        image = buf[offset:offset + id_len].decode('utf-8')
        offset += id_len
        vectors[image] = np.frombuffer(buf, dtype='<f4', count=dim, offset=offset).astype(np.float64)
        offset = end
    if offset != len(buf):
        raise FormatError(f'{len(buf) - offset} trailing bytes', path=path)
    return VisualFeatureStore(vectors, dim)


def guess_format(path) -> str:
    return 'raw-binary' if Path(path).suffix in ('.bin', '.aynf') else 'tsv'


def load_features(path, format: Optional[str] = None) -> VisualFeatureStore:
    format = format or guess_format(path)
    if format == 'tsv':
        store = load_features_tsv(path)
    elif format == 'raw-binary':
        store = load_features_binary(path)
    else:
        raise ValueError(f'Unknown feature format {format!r}')
    logger.debug('Loaded %d feature vectors of dim %d from %s', len(store), store.dim, path)
    return store


def write_features_tsv(store: VisualFeatureStore, path):
    with open(path, 'w', encoding='utf-8') as f:
        for image, vec in store.items():
            f.write(f'{image}\t{",".join(repr(float(v)) for v in vec)}\n')


def write_features_binary(store: VisualFeatureStore, path):
    with open(path, 'wb') as f:
        f.write(_HEADER.pack(MAGIC, len(store), store.dim))
        for image, vec in store.items():
            encoded = image.encode('utf-8')
            f.write(_ID_LEN.pack(len(encoded)))
            f.write(encoded)
            f.write(np.asarray(vec, dtype='<f4').tobytes())


def write_features(store: VisualFeatureStore, path, format: Optional[str] = None):
    format = format or guess_format(path)
    if format == 'tsv':
        write_features_tsv(store, path)
    elif format == 'raw-binary':
        write_features_binary(store, path)
    else:
        raise ValueError(f'Unknown feature format {format!r}')
