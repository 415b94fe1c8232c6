"""Logic-based losses, scalable negative-constraint theories, and
neural-guided constraint selection, with a synthetic training harness."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import (CapacityError, ContractError, MissingAssignmentError,
                     NgpkitError, ParseError, SaturatedLossError,
                     ValidationError)
from .logic import (And, Fact, Formula, IntegrityConstraint, Not, Or,
                    PredictionVector, Var, Vocabulary, eval_boolean,
                    eval_fuzzy, format_formula, formula_of_ic,
                    load_vocabulary, save_vocabulary, variables, wmc,
                    wmc_gradient, wmc_ic_conjunction)
from .losses import (LossKind, LossWeights, combined_loss, dl2_loss,
                     loss_gradient, loss_of_ic_set, semantic_loss, to_nnf)
from .ngp import (ScoredFact, SelectionConfig, exhaustive_select,
                  greedy_select, itr_project, ngp_step, topk_facts)
from .theory import (TheoryStore, build_complement_of_facts,
                     build_from_kg_complement, contains_ic, load_theory,
                     save_theory, theory_stats)
from .harness import (HarnessModel, SceneSample, TrainConfig, WorldSpec,
                      generate_dataset, mean_recall_at_k,
                      run_reduction_sweep, train, zero_shot_recall_at_k)

__version__ = "0.1.0"
