import logging
from collections import OrderedDict

import numpy as np
import pandas as pd


LOGGER = logging.getLogger(__name__)

TRAIN_VAL_RATIO = 8


def _by_stratum(cases, strata):
    groups = OrderedDict()
    for case in cases:
        tag = strata.get(case, '') if strata else ''
        groups.setdefault(tag, []).append(case)
    return OrderedDict(sorted(groups.items()))


def split_folds(cases, k=5, strata=None, seed=0):
    """Shuffle cases into ``k`` disjoint test folds, separately per stratum when
    subgroup tags are given so that every fold holds the same share of each.

    :param cases: Case ids
    :type cases: list
    :param k: Number of folds
    :type k: int
    :param strata: Subgroup tag per case id
    :type strata: dict, optional
    :param seed: Shuffle seed
    :type seed: int
    :return: Fold index per case id, in the order of ``cases``
    :rtype: dict
    """
    if k < 2:
        raise ValueError(f'Need at least two folds, got {k}')
    if len(set(cases)) != len(cases):
        raise ValueError('Case ids must be unique')
    rng = np.random.default_rng(seed)
    folds = {}
    for tag, members in _by_stratum(cases, strata).items():
        if len(members) < k:
            raise ValueError(f'Stratum {tag!r} has {len(members)} cases, fewer than {k} folds')
        for position, index in enumerate(rng.permutation(len(members))):
            folds[members[index]] = position % k
    return {case: folds[case] for case in cases}


def fold_sets(assignment, fold, strata=None, seed=0):
    """Train, validation and test case ids of one fold configuration. The test
    set is the fold itself; the remaining cases split 8:1 into train and
    validation, per stratum when tags are given.

    :type assignment: dict
    :rtype: tuple(list, list, list)
    """
    if fold not in set(assignment.values()):
        raise ValueError(f'Fold {fold} is not in the assignment')
    test = [case for case, f in assignment.items() if f == fold]
    rest = [case for case, f in assignment.items() if f != fold]
    rng = np.random.default_rng([seed, fold])
    val = set()
    for members in _by_stratum(rest, strata).values():
        n_val = int(round(len(members) / (TRAIN_VAL_RATIO + 1)))
        if len(members) > 1:
            n_val = max(1, n_val)
        else:
            n_val = 0
        val.update(members[i] for i in rng.permutation(len(members))[:n_val])
    train = [case for case in rest if case not in val]
    LOGGER.debug('Fold %d: %d train, %d validation, %d test', fold, len(train), len(val), len(test))
    return train, [case for case in rest if case in val], test


def write_folds(assignment, path):
    with open(path, 'w') as handle:
        for case, fold in assignment.items():
            handle.write(f'{case}, {fold}\n')


def read_folds(path):
    """Read ``case_id, fold_index`` lines

    :rtype: dict
    """
    table = pd.read_csv(path, header=None, names=['case_id', 'fold'], skipinitialspace=True,
                        comment='#', dtype={'case_id': str, 'fold': int})
    return dict(zip(table['case_id'], (int(f) for f in table['fold'])))
