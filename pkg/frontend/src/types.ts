/** Wire types of the /v1 session API. Coordinates are [row, col] image pixels. */

export type Point = [number, number];

export interface PointPairDoc {
  handle: Point;
  target: Point;
}

export interface WeightsDoc {
  lambda_clip?: number;
  lambda_kl?: number;
  lambda_contrast?: number;
  mask_term_weight?: number;
}

export interface TogglesDoc {
  ppr_on: boolean;
  reward_on: boolean;
  dwpt_on: boolean;
}

export interface EditDocument {
  points: PointPairDoc[];
  mask: string | null; // run-length string, or null for fully editable
  prompt_initial: string;
  prompt_target: string;
  weights: WeightsDoc;
  toggles: TogglesDoc;
  optimizer: Record<string, unknown>;
}

export interface LossBreakdown {
  ms: number;
  kl: number | null;
  reward: number | null;
  total: number;
}

export interface StepEvent {
  type: "step";
  step_index: number;
  losses: LossBreakdown;
  handles: Point[];
  mean_distance: number;
  kl_divergence: number;
  wall_clock_ms: number;
  preview?: string;
}

export interface MetricReport {
  mean_distance: number;
  clip_obj: number | null;
  clip_tar: number | null;
  one_minus_lpips: number | null;
  wall_clock_s: number;
  flags: string[];
}

export interface TerminalEvent {
  type: "terminal";
  state: "converged" | "capped" | "failed";
  metrics: MetricReport | null;
  error: string | null;
}

export type RunEvent = StepEvent | TerminalEvent;

export interface SessionRecord {
  id: string;
  state: string;
  edit: EditDocument | null;
  history: StepEvent[];
  artifacts: Record<string, string>;
  metrics: MetricReport | null;
  error: string | null;
}
