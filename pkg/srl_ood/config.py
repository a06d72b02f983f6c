"""Configuration settings for SRL-OOD."""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Randomness and logging
SEED = int(os.getenv("SRLOOD_SEED", "0"))
LOG_LEVEL = os.getenv("SRLOOD_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Default locations used by the CLI and the MCP server
DATA_DIR = os.getenv("SRLOOD_DATA_DIR", "./data")
CKPT_DIR = os.getenv("SRLOOD_CKPT_DIR", "./ckpt")

# MCP server settings
MCP_NAME = os.getenv("SRLOOD_MCP_NAME", "srl-ood")

# Opt-in for the multi-seed experiments in the test suite
RUN_SLOW = os.getenv("SRLOOD_RUN_SLOW", "") not in ("", "0")

# Vocabulary specials; [CLS] always sits at position 0 of a sentence
CLS_TOKEN = "[CLS]"
UNK_TOKEN = "[UNK]"
CLS_ID = 0
UNK_ID = 1

# Label written for out-of-distribution examples
OOD_LABEL = -1

# File format magic strings
CKPT_FORMAT = "SRLOOD-CKPT-v1"
DET_FORMAT = "SRLOOD-DET-v1"
EMB_FORMAT = "SRLOOD-EMB-v1"

# Detector and metric constants
PINV_RTOL = 1e-10
TPR_PERCENT = 95
MIN_STABLE_ID = 20
