# models module
from src.models.box import BoxN, EMPTY_BOX, boxes_to_array
from src.models.detection import Detection, ImageDetections
from src.models.feature_map import FeatureMap
from src.models.action_table import ActionTable
from src.models.evaluation import ClassSplit, EvalRecord, EvaluationResult, GtPair
from src.models.scene import ContextBlob, GtInteraction, SceneObject, SceneSpec
