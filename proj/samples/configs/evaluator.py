"""Black-box evaluator for configs/external.json.

Reads one JSON request per line, {"v": 1, "arm": k, "seed": s}, and answers
{"v": 1, "reward": y}. Arm k sits at x = k / 29 on [0, 1]; the reward is a
smooth bump plus noise drawn from the request seed, so repeated runs agree.
"""

import json
import math
import random
import sys


def objective(x: float) -> float:
    return math.exp(-((x - 0.62) ** 2) / 0.02) + 0.3 * math.sin(9.0 * x)


for line in sys.stdin:
    request = json.loads(line)
    x = request["arm"] / 29.0
    noise = random.Random(request["seed"]).gauss(0.0, 0.1)
    print(json.dumps({"v": 1, "reward": objective(x) + noise}), flush=True)
