"""Plain-Python reference computations the tests check the numpy code against.

Parameter sets are ``{name: [float, ...]}`` dicts of flat lists; nothing here
imports the package under test.
"""
import math


def elementwise_mean(sets):
    names = list(sets[0])
    result = {}
    for name in names:
        length = len(sets[0][name])
        result[name] = [sum(params[name][i] for params in sets) / len(sets) for i in range(length)]
    return result


def norm(values, kind='l2'):
    if kind == 'l1':
        return sum(abs(x) for x in values)
    return math.sqrt(sum(x * x for x in values))


def flatten(params, names=None):
    names = list(params) if names is None else names
    return [x for name in names for x in params[name]]


def difference(a, b):
    return [x - y for x, y in zip(a, b)]


def weighted_sum(weights, vectors):
    total = [0.0] * len(vectors[0])
    for weight, vector in zip(weights, vectors):
        for i, value in enumerate(vector):
            total[i] += weight * value
    return total


def normalized(values):
    total = sum(values)
    return [value / total for value in values]


def similarity(vectors, epsilon, kind='l2'):
    count = len(vectors)
    centre = [sum(vector[i] for vector in vectors) / count for i in range(len(vectors[0]))]
    distances = [norm(difference(vector, centre), kind) for vector in vectors]
    total = sum(distances)
    if total == 0.0:
        return [1.0 / count] * count
    return normalized([total / (d + epsilon) for d in distances])


def aggregate(instance):
    """Reference aggregation.

    ``instance`` keys: params, prev (list or None), counts, round, strategy,
    epsilon, onset, scope, norm, drift_mode. Returns ``(master, u, v, w, final)``
    where u, w and final map each key (tensor name, or ``"*"``) to a list.
    """
    params = instance['params']
    prev = instance.get('prev')
    names = list(params[0])
    count = len(params)
    kind = instance.get('norm', 'l2')
    epsilon = instance['epsilon']
    keys = names if instance.get('scope', 'per_tensor') == 'per_tensor' else ['*']

    v = normalized([float(n) for n in instance['counts']])
    u, w, final = {}, {}, {}
    for key in keys:
        key_names = names if key == '*' else [key]
        vectors = [flatten(p, key_names) for p in params]
        u[key] = similarity(vectors, epsilon, kind)
        w[key] = normalized([a + b for a, b in zip(u[key], v)])

        strategy = instance['strategy']
        if strategy == 'fedavg':
            final[key] = list(v)
        elif strategy == 'plain_mean':
            final[key] = [1.0 / count] * count
        elif strategy == 'simagg' or instance['round'] <= instance.get('onset', 10):
            final[key] = list(w[key])
        else:
            drifts = [
                norm(difference(flatten(prev[c], key_names), vectors[c]), kind) for c in range(count)
            ]
            if instance.get('drift_mode', 'round_mean') == 'round_mean':
                mean_drift = sum(drifts) / count
                scaled = [value / (mean_drift + epsilon) for value in w[key]]
            else:
                scaled = [value / (d + epsilon) for value, d in zip(w[key], drifts)]
            final[key] = normalized(scaled)

    master = {}
    for name in names:
        weights = final['*'] if keys == ['*'] else final[name]
        master[name] = weighted_sum(weights, [p[name] for p in params])
    return master, u, v, w, final


def fisher_yates(count, draw):
    """Swap-from-the-top shuffle; ``draw(high)`` returns an int in [0, high]"""
    order = list(range(count))
    for high in range(count - 1, 0, -1):
        low = draw(high)
        order[high], order[low] = order[low], order[high]
    return order


def trapezoid(xs, ys):
    if len(ys) == 1:
        return ys[0]
    span = xs[-1] - xs[0]
    area = 0.0
    for i in range(1, len(xs)):
        area += (xs[i] - xs[i - 1]) / span * (ys[i] + ys[i - 1]) / 2.0
    return area


def sample_std(values):
    mean = sum(values) / len(values)
    return math.sqrt(sum((x - mean) ** 2 for x in values) / (len(values) - 1))


def cross_entropy(logits_rows, labels):
    total = 0.0
    for row, label in zip(logits_rows, labels):
        top = max(row)
        log_norm = top + math.log(sum(math.exp(x - top) for x in row))
        total += log_norm - row[label]
    return total / len(labels)
