from dotenv import load_dotenv
load_dotenv()

from fastapi import FastAPI, Request, status
from fastapi.middleware.cors import CORSMiddleware
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from routers import sampling, cost
from errors import LighTNError
import config
import os

import logging
logger = logging.getLogger(__name__)

config.configure_logging()

app = FastAPI(title="LighTN Point-Cloud Sampling Service")

# Add validation error handler for better error messages
@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request: Request, exc: RequestValidationError):
    """Handle validation errors and return detailed error messages"""
    logger.error(f"Validation error on {request.url.path}: {exc.errors()}")
    return JSONResponse(
        status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
        content={
            "error": "validation_error",
            "detail": [{"loc": list(e["loc"]), "msg": e["msg"], "type": e["type"]} for e in exc.errors()],
        }
    )

@app.exception_handler(LighTNError)
async def toolkit_exception_handler(request: Request, exc: LighTNError):
    """Toolkit errors (bad shapes, m > N, unparsable point files, ...) become 422 documents"""
    logger.error(f"[{exc.code.upper()}] {request.url.path}: {exc}")
    return JSONResponse(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, content=exc.to_dict())

# CORS Configuration (no auth, so no credentials)
cors_origins = os.getenv(
    "CORS_ORIGINS",
    "http://localhost:3000,http://127.0.0.1:3000,http://localhost:5173,http://127.0.0.1:5173"
).split(",")

app.add_middleware(
    CORSMiddleware,
    allow_origins=cors_origins,
    allow_credentials=False,
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)

# Include routers
app.include_router(sampling.router)
app.include_router(cost.router)


@app.get("/")
def root():
    return {"message": "Welcome to the LighTN sampling API"}

@app.get("/health")
def health_check():
    return {"status": "healthy", "output_dir": config.OUTPUT_DIR}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run("main:app", host=os.getenv("HOST", "0.0.0.0"), port=int(os.getenv("PORT", "8000")))
