"""
配置模块
========

包含 MCP 服务初始化、日志配置、环境变量配置和常量定义。
"""

import os
import logging
from mcp.server.fastmcp import FastMCP

# ============================================================
# 日志配置
# ============================================================
TRAJSHAP_LOG_LEVEL = os.getenv("TRAJSHAP_LOG_LEVEL", "INFO").upper()

logging.basicConfig(
    level=getattr(logging, TRAJSHAP_LOG_LEVEL, logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger("TrajShap")

# ============================================================
# MCP 服务初始化
# ============================================================
mcp = FastMCP(
    name="TrajShap-Analyzer",
)

# ============================================================
# 环境变量配置
# ============================================================
TRAJSHAP_OUT_DIR = os.getenv("TRAJSHAP_OUT_DIR")  # 产物输出根目录
TRAJSHAP_MANIFEST = os.getenv("TRAJSHAP_MANIFEST")  # MCP 工具默认使用的实验清单
TRAJSHAP_WORKERS = os.getenv("TRAJSHAP_WORKERS")  # 并行 worker 数量

if (TRAJSHAP_OUT_DIR is None):
    TRAJSHAP_OUT_DIR = "runs"

try:
    DEFAULT_WORKERS = max(1, int(TRAJSHAP_WORKERS)) if TRAJSHAP_WORKERS else 1
except ValueError:
    logger.warning(f"TRAJSHAP_WORKERS={TRAJSHAP_WORKERS!r} 不是整数，回退为 1")
    DEFAULT_WORKERS = 1

# 打开后每个张量运算都会检查 NaN/Inf
DEBUG_NUMERICS = os.getenv("TRAJSHAP_DEBUG_NUMERICS", "").lower() in ("1", "true", "yes", "on")

TOOLKIT_VERSION = "0.1.0"

# ============================================================
# 常量定义
# ============================================================

# 单个状态的字段顺序 {x, y, vx, vy, w, l, theta}
STATE_FIELDS = ["x", "y", "vx", "vy", "w", "l", "theta"]
STATE_DIM = len(STATE_FIELDS)
# 场景文件中浮点数的有效数字位数
SCENE_FLOAT_DIGITS = 17

# 输入特征归一化尺度（与 STATE_FIELDS 一一对应）
FEATURE_SCALE = [20.0, 20.0, 10.0, 10.0, 2.0, 5.0, 3.141592653589793]

# 解码器残差输出的尺度（米）
POSITION_SCALE = 5.0

# 注意力中被屏蔽位置的加性偏置
MASK_BIAS = -1.0e9

# 精确 Shapley 允许的最大周边智能体数
N_EXACT_MAX = 12

# 默认漏检阈值（米）
DEFAULT_MISS_THRESHOLD = 2.0

# 默认 β 网格
DEFAULT_BETA_GRID = [0.01, 0.1, 1.0, 10.0, 100.0]

# 插入测试的分数网格份数：{0, 0.1, ..., 1.0}
INSERTION_GRID_STEPS = 10

# 检查点格式
CHECKPOINT_FORMAT = "trajshap-checkpoint"
CHECKPOINT_VERSION = 1

# 实验清单格式版本
MANIFEST_FORMAT_VERSION = 1

# 流水线阶段顺序
PIPELINE_STAGES = ["gen", "sweep-beta", "train", "attr", "gaps", "insert", "agree", "robust", "report"]

# 各阶段对上游阶段的依赖
STAGE_REQUIREMENTS = {
    "gen": [],
    "sweep-beta": ["gen"],
    "train": ["gen"],
    "attr": ["gen", "train"],
    "gaps": ["gen", "train", "attr"],
    "insert": ["gen", "train", "attr"],
    "agree": ["gen", "train", "attr"],
    "robust": ["gen", "train"],
    "report": ["gen", "train", "attr", "gaps", "insert", "agree", "robust"],
}
