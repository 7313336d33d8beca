/** Folds the run's server-push events into the live view model: per-term
 * loss series, handle trails, preview references, and the terminal report.
 * Series stay indexed by step with no gaps; a gap means a lost event and is
 * surfaced instead of papered over. */

import type { MetricReport, Point, RunEvent, StepEvent, TerminalEvent } from "./types.js";

export interface RunView {
  steps: number[];
  msSeries: number[];
  klSeries: Array<number | null>;
  rewardSeries: Array<number | null>;
  mdSeries: number[];
  handleTrails: Point[][]; // one trail per pair
  previews: Array<{ step: number; url: string }>;
  state: "streaming" | TerminalEvent["state"];
  metrics: MetricReport | null;
  error: string | null;
}

export function emptyRunView(): RunView {
  return {
    steps: [],
    msSeries: [],
    klSeries: [],
    rewardSeries: [],
    mdSeries: [],
    handleTrails: [],
    previews: [],
    state: "streaming",
    metrics: null,
    error: null,
  };
}

export function reduceEvent(view: RunView, event: RunEvent): RunView {
  if (event.type === "terminal") {
    return { ...view, state: event.state, metrics: event.metrics, error: event.error };
  }
  const expected = view.steps.length;
  if (event.step_index !== expected) {
    throw new Error(`event gap: expected step ${expected}, got ${event.step_index}`);
  }
  const next: RunView = {
    ...view,
    steps: [...view.steps, event.step_index],
    msSeries: [...view.msSeries, event.losses.ms],
    klSeries: [...view.klSeries, event.losses.kl],
    rewardSeries: [...view.rewardSeries, event.losses.reward],
    mdSeries: [...view.mdSeries, event.mean_distance],
    handleTrails: mergeTrails(view.handleTrails, event.handles),
    previews: event.preview
      ? [...view.previews, { step: event.step_index, url: event.preview }]
      : view.previews,
  };
  return next;
}

function mergeTrails(trails: Point[][], handles: Point[]): Point[][] {
  const merged = handles.map((h, i) => [...(trails[i] ?? []), h]);
  return merged;
}

export function reduceAll(events: RunEvent[]): RunView {
  return events.reduce(reduceEvent, emptyRunView());
}

/** Final mean distance as charted; must equal the terminal report's. */
export function chartedFinalDistance(view: RunView): number | null {
  return view.mdSeries.length ? view.mdSeries[view.mdSeries.length - 1]! : null;
}
