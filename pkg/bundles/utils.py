"""
Utilidades de E/S para odebundle: CSV, manifiestos, hashes y paralelismo por tramos
"""
from concurrent.futures import ThreadPoolExecutor
import csv
import hashlib
import json
import logging
import os
from pathlib import Path
import platform
import tempfile

import numpy as np

logger = logging.getLogger(__name__)

MANIFEST_FORMAT = 'odebundle-manifest'
MANIFEST_NAME = 'manifest.json'


def fmt(value):
    """Número con 12 cifras significativas; cadena vacía para None"""
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f'{float(value):.12g}'


def write_csv(path, header, rows):
    """Escribe un CSV con encabezado; los números se formatean con fmt()"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    logger.debug(f'CSV escrito: {path}')
    return path


def read_csv(path):
    """Lee un CSV como (encabezado, filas)"""
    with open(path, newline='', encoding='utf-8') as fh:
        filas = list(csv.reader(fh))
    if not filas:
        return [], []
    return filas[0], filas[1:]


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as fh:
        for bloque in iter(lambda: fh.read(1 << 16), b''):
            digest.update(bloque)
    return digest.hexdigest()


def write_json(path, data):
    """JSON determinista (claves ordenadas) con escritura atómica"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    texto = json.dumps(data, sort_keys=True, indent=2) + '\n'
    fd, tmp = tempfile.mkstemp(prefix=path.name, suffix='.tmp', dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8') as fh:
            fh.write(texto)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def library_versions():
    """Versiones relevantes para reproducir una corrida"""
    import django
    import scipy
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'django': django.get_version(),
    }


def build_manifest(command, config, seed, outputs):
    """Manifiesto de corrida: comando, configuración resuelta, semilla, versiones y salidas"""
    return {
        'format': MANIFEST_FORMAT,
        'command': command,
        'config': config,
        'seed': seed,
        'versions': library_versions(),
        'outputs': {
            Path(p).name: sha256_file(p) for p in outputs if Path(p).exists()
        },
    }


def write_manifest(output_dir, command, config, seed, outputs):
    path = Path(output_dir) / MANIFEST_NAME
    write_json(path, build_manifest(command, config, seed, outputs))
    logger.info(f'Manifiesto escrito en {path}')
    return path


def is_manifest(document):
    return isinstance(document, dict) and document.get('format') == MANIFEST_FORMAT


def chunked_map(fn, total, chunk_size, threads=1):
    """
    Aplica fn(slice) sobre tramos contiguos de [0, total) y devuelve los
    resultados en orden de tramo, con `threads` hilos como máximo.
    """
    chunk_size = max(1, int(chunk_size))
    tramos = [slice(i, min(i + chunk_size, total)) for i in range(0, total, chunk_size)]
    if threads <= 1 or len(tramos) <= 1:
        return [fn(s) for s in tramos]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(fn, tramos))
