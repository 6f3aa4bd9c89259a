# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

from __future__ import annotations

import fragment_shuffle


defaults = {
    "version": fragment_shuffle.__version__,
    "title": "Fragment Shuffle Experiment",
    "seed": 0,
    "trials": 1,
    "topk": 10,
    "accounting": "binary_exact",
    "simulation": "auto",
    "shuffler_instances": 0,
    "out_dir": "results",
    "clamp": False,
    "fragment_rule": "variance",
    "threads": 1,
}

#: Central delta of the shipped dataset presets.
preset_deltas = {
    "horse": 5e-8,
    "child": 5e-9,
    "map": 5e-10,
    "heavy_hitter": 1e-9,
}

#: Largest n·k·tau simulated report by report when ``simulation = "auto"``.
AUTO_EXPLICIT_LIMIT = 2_000_000

#: First line of every results.csv file.
RESULTS_SCHEMA_LINE = "# fragment-shuffle results schema v2"

RESULT_COLUMNS = [
    "row",
    "dataset",
    "mechanism",
    "status",
    "epsilon_c",
    "delta",
    "epsilon_linf",
    "epsilon_l1",
    "tau",
    "epsilon_backstop",
    "epsilon_fragment",
    "epsilon_c_fragments",
    "rmse",
    "rmse_std",
    "linf",
    "linf_std",
    "topk_recall",
    "topk_recall_std",
    "messages_per_respondent",
]

#: Luminosity scale applied to image presets.
IMAGE_SCALE = 2.5

#: Power-law exponent of the heavy-hitter preset.
POWERLAW_EXPONENT = 1.35
