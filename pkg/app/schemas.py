"""Pydantic schemas for scenario configuration, metrics and the run service."""

from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Section(BaseModel):
    """Base for config sections: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


class GridSection(_Section):
    """Manhattan street grid."""
    n_rows: int = Field(3, ge=0, description="Horizontal streets")
    n_cols: int = Field(3, ge=0, description="Vertical streets")
    block_m: float = Field(100.0, gt=0, description="Street spacing in meters")

    @model_validator(mode="after")
    def _has_street(self) -> "GridSection":
        # zero in one direction is a straight corridor
        if self.n_rows + self.n_cols < 1:
            raise ValueError("grid needs at least one street")
        return self


class ChannelSection(_Section):
    """Mobility, blockage and propagation world shared by both bands."""
    seed: int = Field(0, description="World seed")
    slot_duration_s: float = Field(1e-4, gt=0, description="Slot duration in seconds")
    speed_mps: float = Field(11.11, gt=0, description="Vehicle speed (40 km/h)")
    blocker_density: float = Field(10.0, ge=0, description="Blocking vehicles per km")
    blockage_correlation: float = Field(0.995, ge=0, lt=1, description="Per-slot AR(1) coefficient of the blockage process")
    scenario: Literal["umi_los", "umi_nlos"] = Field("umi_los", description="LOS cluster allowed or always suppressed")
    grid: GridSection = Field(default_factory=GridSection)
    bs_position: Tuple[float, float] = Field((-20.0, 15.0), description="Base station position in meters")
    path_loss_exp_los: float = Field(2.0, gt=0)
    path_loss_exp_nlos: float = Field(3.2, gt=0)

    @model_validator(mode="after")
    def _nlos_steeper(self) -> "ChannelSection":
        if self.path_loss_exp_nlos < self.path_loss_exp_los:
            raise ValueError("path_loss_exp_nlos must be >= path_loss_exp_los")
        return self


class BandSection(_Section):
    """Fields shared by both band sections."""
    carrier_hz: float = Field(..., gt=0)
    bandwidth_hz: float = Field(..., gt=0)
    n_subcarriers: int = Field(..., ge=1)
    n_bs: int = Field(..., ge=1, description="Base station antennas")
    n_ue: int = Field(..., ge=1, description="User antennas")
    n_s: int = Field(..., ge=1, description="Data streams")
    cluster_count: int = Field(..., ge=1, description="Clusters including the LOS cluster")
    k_factor_db: float = Field(9.0, description="Power ratio of LOS to NLOS clusters")
    delay_spread_s: float = Field(..., gt=0, description="Mean NLOS excess delay")
    noise_figure_db: float = Field(..., ge=0)
    kappa_channel: int = Field(1, ge=1, description="Feedback bits per slot")


class MmwaveSection(BandSection):
    """Hybrid mmWave array and beam management."""
    carrier_hz: float = Field(28e9, gt=0)
    bandwidth_hz: float = Field(850e6, gt=0)
    n_subcarriers: int = Field(16, ge=1)
    n_bs: int = Field(8, ge=1)
    n_ue: int = Field(4, ge=1)
    n_s: int = Field(2, ge=1)
    cluster_count: int = Field(5, ge=1)
    delay_spread_s: float = Field(30e-9, gt=0)
    noise_figure_db: float = Field(9.0, ge=0)
    nu_bs: Optional[int] = Field(None, ge=1, description="BS analog codebook size, defaults to n_bs")
    nu_ue: Optional[int] = Field(None, ge=1, description="UE analog codebook size, defaults to n_ue")
    n_bs_rf: int = Field(2, ge=1)
    n_ue_rf: int = Field(2, ge=1)
    m_ss: int = Field(1, ge=1, description="Slots per SS burst")
    n_ss: int = Field(4, ge=1, description="SS blocks per burst")
    kappa_rvq: int = Field(3, ge=1, description="RVQ codebook bits")
    rvq_training: int = Field(4096, ge=2, description="Lloyd training-set size")
    rvq_seed: int = Field(7, description="RVQ codebook seed")
    beta_rf: float = Field(0.1, gt=0)
    zeta_rf: float = Field(10.0, gt=0)
    beta_bb: float = Field(0.1, gt=0)
    zeta_bb: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def _chains(self) -> "MmwaveSection":
        if self.nu_bs is None:
            self.nu_bs = self.n_bs
        if self.nu_ue is None:
            self.nu_ue = self.n_ue
        if self.n_bs_rf > self.nu_bs or self.n_ue_rf > self.nu_ue:
            raise ValueError("analog codebooks must be at least as large as the RF chain counts")
        if self.n_s > min(self.n_bs_rf, self.n_ue_rf):
            raise ValueError("n_s cannot exceed the RF chain counts")
        return self


class Sub6Section(BandSection):
    """Fully digital sub-6 GHz array with PMI feedback."""
    carrier_hz: float = Field(3.5e9, gt=0)
    bandwidth_hz: float = Field(150e6, gt=0)
    n_subcarriers: int = Field(8, ge=1)
    n_bs: int = Field(4, ge=1)
    n_ue: int = Field(4, ge=1)
    n_s: int = Field(2, ge=1)
    cluster_count: int = Field(8, ge=1)
    k_factor_db: float = Field(3.0)
    delay_spread_s: float = Field(100e-9, gt=0)
    noise_figure_db: float = Field(7.0, ge=0)
    nu_pmi: int = Field(16, ge=1, description="PMI codebook size")
    beta: float = Field(0.1, gt=0)
    zeta: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def _streams(self) -> "Sub6Section":
        if self.n_s > min(self.n_bs, self.n_ue):
            raise ValueError("n_s cannot exceed the antenna counts")
        return self


class EnvSection(_Section):
    """Decision environment."""
    m_dt: int = Field(10, ge=1, description="Slots per data transmission")
    episode_len_decisions: int = Field(200, ge=1)
    stale_horizon_slots: Optional[int] = Field(None, ge=1, description="Defaults to 2 * M_RF")
    initial_band: Literal["sub6", "mmwave"] = "sub6"
    stale_decay: float = Field(0.5, ge=0, le=1)


class DrlSection(_Section):
    """Flat DDPG hyperparameters."""
    gamma: float = Field(0.99, ge=0, le=1)
    batch_size: int = Field(64, ge=1)
    buffer_capacity: int = Field(100_000, ge=1)
    eta: float = Field(0.005, ge=0, le=1, description="Polyak coefficient")
    actor_lr: float = Field(1e-4, gt=0)
    critic_lr: float = Field(1e-3, gt=0)
    noise_start: float = Field(0.2, ge=0, description="Exploration std relative to tau_max")
    noise_end: float = Field(0.02, ge=0)
    hidden: List[int] = Field(default_factory=lambda: [64, 64])
    tau_max_init: float = Field(8.0, gt=0, description="Initial threshold range in bps/Hz")


class HrlSection(_Section):
    """Two-level learner."""
    m_upper: int = Field(8, ge=1, description="Upper decision period in decisions")
    correction: Literal["relabel", "direct_is", "none"] = "relabel"
    round_skip: Literal["on", "off"] = "on"
    period_mode: Literal["adaptive", "fixed"] = "adaptive"
    w_clip: Tuple[float, float] = (1e-3, 1e3)
    pinned_goal: Optional[int] = Field(None, ge=0, le=1)
    upper_updates: bool = True
    upper: DrlSection = Field(default_factory=DrlSection)
    lower: DrlSection = Field(default_factory=DrlSection)

    @field_validator("w_clip")
    @classmethod
    def _clip_order(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        if not 0 < v[0] <= 1 <= v[1]:
            raise ValueError("w_clip must satisfy 0 < low <= 1 <= high")
        return v


Policy = Literal["genie", "greedy", "three_threshold", "hrl"]
SweepAxis = Literal["power", "rvq_bits", "vehicle_density", "upper_period"]


class ExperimentSection(_Section):
    """Experiment grid."""
    policies: List[Policy] = Field(default_factory=lambda: ["genie", "greedy", "three_threshold", "hrl"])
    n_episodes: int = Field(100, ge=1)
    n_seeds: int = Field(1, ge=1)
    seed: int = Field(0, description="Base seed; cell seeds are seed + i")
    transmit_power_dbm: float = Field(30.0)
    sweep_axis: Optional[SweepAxis] = None
    sweep_values: List[float] = Field(default_factory=list)
    summary_window: int = Field(20, ge=1, description="Decisions averaged in the summary row")
    workers: int = Field(1, ge=1)
    save_checkpoints: bool = Field(False, description="Write learner checkpoints next to the metrics")
    genie_search: Literal["sweep", "exhaustive"] = Field(
        "sweep", description="mmWave beams the oracles consider: the noiseless greedy sweep, or every beam assignment"
    )

    @model_validator(mode="after")
    def _sweep(self) -> "ExperimentSection":
        if self.sweep_axis is not None and not self.sweep_values:
            raise ValueError("sweep_values must be non-empty when sweep_axis is set")
        if not self.policies:
            raise ValueError("policies must be non-empty")
        return self


class ScenarioConfig(_Section):
    """Every knob of one experiment."""
    channel: ChannelSection = Field(default_factory=ChannelSection)
    mmwave: MmwaveSection = Field(default_factory=MmwaveSection)
    sub6: Sub6Section = Field(default_factory=Sub6Section)
    env: EnvSection = Field(default_factory=EnvSection)
    drl: DrlSection = Field(default_factory=DrlSection)
    hrl: HrlSection = Field(default_factory=HrlSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)


class MetricsRow(BaseModel):
    """One row of metrics.csv or summary.csv."""
    seed: int
    episode: int = Field(..., description="Episode index, -1 on summary rows")
    policy: str
    sweep_value: float
    mean_reward_bps: float = Field(..., description="Mean reward per decision")
    mean_rate_bps: float = Field(..., description="Bits delivered per second of simulated time")
    training_fraction: float = Field(..., ge=0, le=1)
    band_occupancy_mmwave: float = Field(..., ge=0, le=1)


class ExperimentRequest(BaseModel):
    """Request body for POST /experiments."""
    profile: Literal["desk", "full"] = Field("desk", description="Base profile")
    overrides: Dict[str, Any] = Field(default_factory=dict, description="Dotted key overrides")
    policy: Optional[Policy] = Field(None, description="Restrict to one policy")
    seeds: Optional[int] = Field(None, ge=1, description="Override experiment.n_seeds")
    episodes: Optional[int] = Field(None, ge=1, description="Override experiment.n_episodes")


class RunSummary(BaseModel):
    """Response for a finished run."""
    run_id: str
    status: str
    profile: str
    elapsed_s: float
    summary: List[MetricsRow] = Field(default_factory=list)
    out_dir: Optional[str] = None


class OverheadResponse(BaseModel):
    """Training overheads of a profile, in slots."""
    profile: str
    m_rf: int
    m_bb: int
    m_bb_sub6: int


class RunResultPayload(BaseModel):
    """Payload posted to RESULTS_CALLBACK_URL."""
    runId: str = Field(..., description="Run ID")
    profile: str
    policies: List[str]
    summary: List[MetricsRow]
    elapsedSeconds: float
