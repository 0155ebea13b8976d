"""Long-format CSV tables keyed by ``node_id,timestep`` over a full node x time grid.

Floats are written with ``repr`` so every value round-trips exactly.
"""
import csv
import io

import numpy as np

from .errors import ParseError


def _quote(text: str) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow([text])
    return buf.getvalue()


def write_grid(fh, header, node_ids, t0: int, columns) -> None:
    """``columns`` holds ``(n_nodes, n_steps)`` float arrays or constant strings."""
    arrays = [c for c in columns if not isinstance(c, str)]
    n, t = arrays[0].shape
    fh.write(",".join(header) + "\n")
    nodes = [_quote(str(v)) for v in node_ids]
    cols = [[nodes[i] for i in range(n) for _ in range(t)],
            list(map(str, np.tile(np.arange(t0, t0 + t), n).tolist()))]
    for c in columns:
        cols.append([c] * (n * t) if isinstance(c, str)
                    else list(map(repr, np.asarray(c, dtype=float).ravel().tolist())))
    fh.writelines(",".join(parts) + "\n" for parts in zip(*cols))


def _locate_error(path, width: int, n_keys: int):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} fields, got {len(row)}", line)
            try:
                int(row[1])
                [float(v) for v in row[n_keys:]]
            except ValueError:
                raise ParseError("malformed number", line) from None
    raise ParseError("unreadable table")


def read_grid(path, n_keys: int = 2):
    """Parse a grid table.

    Returns ``(header, node_ids, t0, extra, values)`` where ``extra`` are the raw
    string columns between the timestep and the float columns (``n_keys > 2``)
    and ``values`` is shaped ``(n_float_columns, n_nodes, n_steps)``.
    """
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
        has_rows = any(line.strip() for line in fh)
    if header is None:
        raise ParseError("empty file", 1)
    if not has_rows:
        raise ParseError("no data rows")
    width = len(header)
    try:
        cells = np.loadtxt(path, dtype=str, delimiter=",", skiprows=1, quotechar='"', comments=None, ndmin=2)
        if cells.shape[1] != width:
            raise ValueError
        steps = cells[:, 1].astype(np.int64)
        values = cells[:, n_keys:].T.astype(float)
    except ValueError:
        _locate_error(path, width, n_keys)
    names, first, inverse = np.unique(cells[:, 0], return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")              # file order of first appearance
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    nodes = tuple(names[order].tolist())
    t0 = int(steps.min())
    n_steps = int(steps.max()) - t0 + 1
    flat = rank[inverse.ravel()] * n_steps + (steps - t0)
    if cells.shape[0] != len(nodes) * n_steps or np.bincount(flat, minlength=len(nodes) * n_steps).max() != 1:
        raise ParseError("table must cover every node over a contiguous timestep range exactly once")
    grid = np.empty((values.shape[0], len(nodes) * n_steps))
    grid[:, flat] = values
    extra = [cells[:, k].tolist() for k in range(2, n_keys)]
    return header, nodes, t0, extra, grid.reshape(values.shape[0], len(nodes), n_steps)
