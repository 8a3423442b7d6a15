"""FastAPI application exposing the toolkit's workflows over HTTP."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import workflows
from ..errors import NMSparseError
from .schemas import (
    ProfileRequest,
    ProfileResponse,
    ProjectRequest,
    ProjectResponse,
    ReparamRequest,
    ReparamResponse,
    SpreBuildRequest,
    SpreBuildResponse,
    TrainConfigModel,
    TrainResponse,
    VerifyRequest,
    VerifyResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(
        title="nmsparse",
        description="n:m structured sparsity with two-branch spatial re-parameterization",
        version="0.1.0",
    )

    @app.exception_handler(NMSparseError)
    async def toolkit_error(request: Request, exc: NMSparseError) -> JSONResponse:
        return JSONResponse(
            status_code=400, content={"error": str(exc), "kind": type(exc).__name__}
        )

    @app.exception_handler(FileNotFoundError)
    async def missing_file(request: Request, exc: FileNotFoundError) -> JSONResponse:
        return JSONResponse(
            status_code=404, content={"error": str(exc), "kind": "FileNotFoundError"}
        )

    @app.get("/health")
    async def health() -> dict:
        return {"status": "ok", "service": "nmsparse", "version": app.version}

    @app.post("/train", response_model=TrainResponse)
    def train_endpoint(config: TrainConfigModel) -> TrainResponse:
        result = workflows.run_train(
            config.to_core(),
            checkpoint_out=config.checkpoint_out,
            metrics_out=config.metrics_out,
            profiles_out=config.profiles_out,
        )
        return TrainResponse(**result)

    @app.post("/profile", response_model=ProfileResponse)
    def profile_endpoint(req: ProfileRequest) -> ProfileResponse:
        return ProfileResponse(**workflows.run_profile(req.checkpoint, req.out))

    @app.post("/project", response_model=ProjectResponse)
    def project_endpoint(req: ProjectRequest) -> ProjectResponse:
        return ProjectResponse(**workflows.run_project(req.checkpoint, req.n, req.m, req.out))

    @app.post("/spre-build", response_model=SpreBuildResponse)
    def spre_build_endpoint(req: SpreBuildRequest) -> SpreBuildResponse:
        return SpreBuildResponse(
            **workflows.run_spre_build(req.checkpoint, req.n, req.m, req.variant, req.out)
        )

    @app.post("/reparam", response_model=ReparamResponse)
    def reparam_endpoint(req: ReparamRequest) -> ReparamResponse:
        return ReparamResponse(**workflows.run_reparam(req.checkpoint, req.out))

    @app.post("/verify", response_model=VerifyResponse)
    def verify_endpoint(req: VerifyRequest) -> VerifyResponse:
        return VerifyResponse(
            **workflows.run_verify(
                req.checkpoint_two_branch,
                req.checkpoint_merged,
                trials=req.trials,
                tolerance=req.tolerance,
                seed=req.seed,
                dtype=req.dtype,
            )
        )

    return app
