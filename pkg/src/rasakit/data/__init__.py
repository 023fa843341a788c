from .metaqa import MetaQAQuestion, load_metaqa_kb, load_metaqa_questions
from .subgraph import sample_subgraph
from .synthetic import (
    SPLITS,
    Dataset,
    SyntheticSpec,
    gen_khop_dataset,
    gen_random_graph,
    load_dataset,
    save_dataset,
    verify_dataset,
)
