"""Benchmark problem families: Student's t regression, Geman-McClure
classification and biweight loss with a group penalty."""
from .classification import (
    BiweightGroupInstance,
    BiweightOracle,
    ClassificationInstance,
    GemanMcClureOracle,
    biweight_eta_rule,
    biweight_group_instance,
    gen_biweight,
    gen_classification,
    geman_mcclure_eta_rule,
    geman_mcclure_oracle,
    geman_mcclure_problem,
)
from .dct import DenseIsometry, PartialDCT, dct, dct_matrix, idct
from .students_t import (
    StudentsTInstance,
    StudentsTOracle,
    gen_students_t,
    load_students_t,
    save_students_t,
    students_t_oracle,
    students_t_problem,
)
