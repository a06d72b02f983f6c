"""Model Context Protocol server exposing corpus generation, training and scoring."""

import sys
import argparse
import logging
from typing import Any, Dict, List, Optional

try:
    from mcp.server.fastmcp import FastMCP
except ImportError:
    print("MCP SDK not found. Please install it using: pip install mcp")
    sys.exit(1)

from pydantic import ValidationError

from . import config, pipeline
from .data_io import CorpusSpec, DataError
from .detector import DetectorError
from .model.checkpoint import CheckpointError

logger = logging.getLogger("srl-ood.server")

KNOWN_ERRORS = (ValidationError, OSError, DataError, DetectorError, CheckpointError, pipeline.PipelineError)


class SRLOODServer:
    """MCP server wrapping the SRL-OOD pipeline."""

    def __init__(self, name: Optional[str] = None):
        self.name = name or config.MCP_NAME
        self.server = FastMCP(self.name)
        self._register_tools()
        logger.info(f"MCP server {self.name} initialized")

    def _register_tools(self):
        self.server.add_tool(
            self.generate_corpus,
            name="generate_corpus",
            description="Generate a synthetic corpus with gold role spans and an OOD split",
        )
        self.server.add_tool(
            self.train_model,
            name="train_model",
            description="Train an encoder on a dataset directory and fit its OOD detector",
        )
        self.server.add_tool(
            self.evaluate_model,
            name="evaluate_model",
            description="Report AUROC and FAR95 of a trained run on ID and OOD corpus files",
        )
        self.server.add_tool(
            self.score_embeddings,
            name="score_embeddings",
            description="Score an embedding dump with a saved detector",
        )

    def generate_corpus(self, out_dir: str = config.DATA_DIR, spec: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """Generate a corpus from a spec (defaults for missing fields) into out_dir."""
        try:
            corpus = pipeline.generate_dataset(CorpusSpec.model_validate(spec or {}), out_dir)
            sizes = {name: len(split) for name, split in corpus.splits().items()}
            return {"success": True, "out_dir": out_dir, "sizes": sizes}
        except KNOWN_ERRORS as e:
            logger.error(f"Corpus generation error: {e}")
            return {"success": False, "message": f"Corpus generation error: {str(e)}"}
        except Exception as e:
            logger.error(f"Unexpected error: {e}")
            return {"success": False, "message": f"Unexpected error: {str(e)}"}

    def train_model(
        self,
        data_dir: str = config.DATA_DIR,
        out_dir: str = config.CKPT_DIR,
        train_config: Optional[Dict[str, Any]] = None,
        seed: Optional[int] = None,
    ) -> Dict[str, Any]:
        """Train on data_dir and save the best run to out_dir."""
        try:
            cfg = pipeline.TrainConfig.model_validate(train_config or {})
            if seed is not None:
                cfg = pipeline.with_seed(cfg, seed)
            result = pipeline.train_to_dir(cfg, data_dir, out_dir)
            return {
                "success": True,
                "out_dir": out_dir,
                "best_step": result.best_step,
                "best_metric": result.best_metric,
            }
        except pipeline.NumericError as e:
            logger.error(f"Numeric failure: {e}")
            return {"success": False, "message": f"Numeric failure: {str(e)}"}
        except KNOWN_ERRORS as e:
            logger.error(f"Training error: {e}")
            return {"success": False, "message": f"Training error: {str(e)}"}
        except Exception as e:
            logger.error(f"Unexpected error: {e}")
            return {"success": False, "message": f"Unexpected error: {str(e)}"}

    def evaluate_model(
        self,
        id_path: str,
        ood_paths: Dict[str, str],
        run_dir: str = config.CKPT_DIR,
        view: str = "full",
    ) -> Dict[str, Any]:
        """Evaluate a saved run; ood_paths maps OOD set names to corpus files."""
        if not ood_paths:
            return {"success": False, "message": "Missing ood_paths parameter"}
        try:
            report = pipeline.evaluate_files(run_dir, id_path, ood_paths, view=view)
            return {"success": True, "report": report.model_dump(mode="json")}
        except KNOWN_ERRORS as e:
            logger.error(f"Evaluation error: {e}")
            return {"success": False, "message": f"Evaluation error: {str(e)}"}
        except Exception as e:
            logger.error(f"Unexpected error: {e}")
            return {"success": False, "message": f"Unexpected error: {str(e)}"}

    def score_embeddings(self, detector_path: str, embeddings_path: str) -> Dict[str, Any]:
        """Score every record of an embedding dump."""
        try:
            table = pipeline.score_file(detector_path, embeddings_path)
            scores: List[Dict[str, Any]] = table.to_dict(orient="records")
            return {"success": True, "scores": scores}
        except KNOWN_ERRORS as e:
            logger.error(f"Scoring error: {e}")
            return {"success": False, "message": f"Scoring error: {str(e)}"}
        except Exception as e:
            logger.error(f"Unexpected error: {e}")
            return {"success": False, "message": f"Unexpected error: {str(e)}"}

    def run(self):
        """Run the MCP server over stdio."""
        logger.info("Starting SRL-OOD MCP Server...")
        self.server.run()


def main():
    """Main entry point for the MCP server."""
    parser = argparse.ArgumentParser(description="SRL-OOD MCP Server")
    parser.add_argument("--name", help="Server name", default=config.MCP_NAME)
    parser.add_argument("--debug", help="Enable debug logging", action="store_true")

    args = parser.parse_args()

    logging.basicConfig(
        level=logging.DEBUG if args.debug else config.LOG_LEVEL,
        format=config.LOG_FORMAT,
        handlers=[logging.StreamHandler()],
    )

    server = SRLOODServer(name=args.name)
    server.run()


if __name__ == "__main__":
    main()
