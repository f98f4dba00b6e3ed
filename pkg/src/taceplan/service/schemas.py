"""Pydantic request/response models of the HTTP API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class ComboSpec(BaseModel):
    drugs: list[str] = Field(default_factory=list)
    embolics: list[str] = Field(default_factory=list)


class SessionCreate(BaseModel):
    patient_id: str
    request_id: Optional[str] = None


class SimulateRequest(BaseModel):
    combo: ComboSpec
    replicas: int = Field(default=1, ge=1, le=16)
    seed: int = 0
    request_id: Optional[str] = None


class ExploreConfigSpec(BaseModel):
    beams: int = Field(default=1, ge=1, le=16)
    drug_horizon: int = Field(default=1, ge=1, le=6)
    embolic_horizon: int = Field(default=1, ge=1, le=4)
    replicas: int = Field(default=1, ge=1, le=16)
    seed: int = 0


class ExploreRequest(BaseModel):
    config: ExploreConfigSpec = Field(default_factory=ExploreConfigSpec)
    request_id: Optional[str] = None


class FinalProtocolRequest(BaseModel):
    combo: ComboSpec
    provenance: Literal["manual", "explored", "manual-after-explore"] = "manual"
    request_id: Optional[str] = None


class ViolationView(BaseModel):
    rule_id: str
    rule_type: str
    message: str


class ProtocolRow(BaseModel):
    label: str
    combo: ComboSpec
    mean_risk: float
    replica_risks: list[float]
    replicas: int
    seed: int
    state_id: str
    source: Literal["manual", "explored"]


class FinalProtocolView(BaseModel):
    combo: ComboSpec
    provenance: str


class SessionView(BaseModel):
    id: str
    patient_id: str
    model_ref: str
    pre_state_id: str
    dims: tuple[int, int, int] = (0, 0, 0)
    protocols: list[ProtocolRow]
    active_job_id: Optional[str] = None
    final_protocol: Optional[FinalProtocolView] = None


class SimulateResponse(BaseModel):
    mean_risk: float
    replica_risks: list[float]
    state_id: str


class JobView(BaseModel):
    id: str
    session_id: str
    status: Literal["queued", "running", "succeeded", "failed"]
    plan: Optional[dict] = None
    error: Optional[str] = None


class ExploreAccepted(BaseModel):
    job_id: str


class ActionUnitView(BaseModel):
    name: str
    kind: str
    tags: list[str]


class RuleView(BaseModel):
    id: str
    type: str
    params: dict
    description: str


class ActionsView(BaseModel):
    drugs: list[ActionUnitView]
    embolics: list[ActionUnitView]
    rules: list[RuleView]


class ErrorBody(BaseModel):
    error: str
    detail: str = ""
    violations: list[ViolationView] = Field(default_factory=list)
