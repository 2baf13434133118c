"""Discrete nested Markov models for conditional acyclic directed mixed graphs."""

from .cadmg import (Cadmg, GraphError, IntrinsicStructure, ancestors, apply_d, apply_m, districts,
                    format_graph, intrinsic_closure, intrinsic_structure, parents, read_graph,
                    reachable_sets, sterile, subgraph_into)
from .data import dataset
from .fit import ContingencyTable, FitConfig, FitError, FitResult, chi_square_survival, fit, lr_test, standard_errors
from .graphs import builtin
from .kernel import Kernel, KernelError, condition, district_factor, joint, marginal, reach_kernel
from .param import (NestedModel, NestedParams, StateSpace, dimension, do_margin, do_probability,
                    from_distribution, random_params, to_distribution)
from .verify import (LatentDag, check_recursive_factorization, jacobian_rank, latent_project,
                     sample_distribution, verma_constraint_gap)

__version__ = "0.1.0"
