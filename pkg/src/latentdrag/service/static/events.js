/** Folds the run's server-push events into the live view model: per-term
 * loss series, handle trails, preview references, and the terminal report.
 * Series stay indexed by step with no gaps; a gap means a lost event and is
 * surfaced instead of papered over. */
export function emptyRunView() {
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
export function reduceEvent(view, event) {
    if (event.type === "terminal") {
        return { ...view, state: event.state, metrics: event.metrics, error: event.error };
    }
    const expected = view.steps.length;
    if (event.step_index !== expected) {
        throw new Error(`event gap: expected step ${expected}, got ${event.step_index}`);
    }
    const next = {
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
function mergeTrails(trails, handles) {
    const merged = handles.map((h, i) => [...(trails[i] ?? []), h]);
    return merged;
}
export function reduceAll(events) {
    return events.reduce(reduceEvent, emptyRunView());
}
/** Final mean distance as charted; must equal the terminal report's. */
export function chartedFinalDistance(view) {
    return view.mdSeries.length ? view.mdSeries[view.mdSeries.length - 1] : null;
}
