"""Topic segmentation of time-aligned word streams.

The pipeline chops a word stream into pseudosentence units, scores unit
sequences with topic-cluster unigram LMs inside an HMM, models boundary
features with a decision tree, combines the two knowledge sources (in the
tree or in the HMM), and scores hypotheses with probe-based miss /
false-alarm rates and their weighted cost.
"""

__version__ = "0.1.0"

from .chopping import ChopCriterion, ChopUnit, chop, project_boundaries
from .combine import (
    CM_DT,
    CM_HMM,
    LM_ONLY,
    PM_ONLY,
    CombinerConfig,
    ModeParams,
    PreparedShow,
    cm_dt_decide,
    cm_dt_features,
    decode_show,
    posterior_to_loglike,
    prepare_show,
    tune,
)
from .corpus import (
    BoundaryFeatureVector,
    FeatureSchema,
    Show,
    Story,
    Token,
    load_feature_table,
    load_shows,
    load_stories,
)
from .errors import ParseError, TopicsegError, ValidationError
from .evaluation import (
    EvalConfig,
    EvalReport,
    TimeSegmentation,
    WordSegmentation,
    c_seg,
    evaluate_corpus,
    time_based,
    word_based,
)
from .hmm import (
    HmmConfig,
    SegmentationHmm,
    SegmentationHypothesis,
    boundary_posteriors,
    build_hmm,
    prosody_only_segment,
    viterbi_segment,
)
from .synthesis import FeatureProfile, SourceTopology, generate, make_generator_model
from .topic_lm import (
    TopicClusterModel,
    cluster_stories,
    content_bag,
    estimate_model,
    unit_log_likelihood,
)
from .tree import (
    DecisionTree,
    TreeTrainConfig,
    downsample,
    entropy_reduction,
    feature_usage,
    predict,
    select_features,
    train,
)
