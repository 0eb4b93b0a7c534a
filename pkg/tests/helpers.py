from core import Document


def make_document(doc_id, pieces):
    """Document whose chunks are exactly the given text pieces, in order."""
    spans, cursor = [], 0
    for piece in pieces:
        spans.append((cursor, cursor + len(piece)))
        cursor += len(piece)
    return Document.from_spans(doc_id, "".join(pieces), spans)


def finite_difference_errors(loss_fn, params, grads, rng, coords_per_tensor=3, step=1e-4):
    """Central differences at random coordinates of every tensor.

    Returns (analytic, numeric) pairs so callers can apply their own tolerance.
    """
    import torch

    pairs = []
    with torch.no_grad():
        for name, param in params.named_parameters():
            flat = param.view(-1)
            for index in rng.choice(flat.numel(), size=min(coords_per_tensor, flat.numel()), replace=False).tolist():
                original = flat[index].item()
                flat[index] = original + step
                plus = float(loss_fn(params))
                flat[index] = original - step
                minus = float(loss_fn(params))
                flat[index] = original
                pairs.append((float(grads[name].view(-1)[index]), (plus - minus) / (2 * step)))
    return pairs


def within_tolerance(pairs, rtol=1e-4, atol=1e-7):
    return all(abs(a - n) <= atol + rtol * max(abs(a), abs(n)) for a, n in pairs)
