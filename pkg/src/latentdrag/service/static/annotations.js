/** Canvas annotation state: numbered handle/target pairs placed by
 * alternating clicks, a painted editable-region mask, and serialization to
 * the edit document the service accepts. What the canvas shows is exactly
 * what serializes. */
import { encodeRle } from "./rle.js";
export class CanvasAnnotation {
    constructor(height, width) {
        this.pairs = [];
        this.maskPainted = false;
        this.activeTool = "points";
        this.brushRadius = 4;
        this.height = height;
        this.width = width;
        this.mask = new Uint8Array(height * width);
    }
    get pendingPair() {
        const last = this.pairs[this.pairs.length - 1];
        return last && last.target === null ? last : null;
    }
    /** Alternating click protocol: first click of a pair places the handle,
     * the next places its target. Returns false for ignored clicks. */
    placePoint(pixel) {
        if (pixel === null)
            return false;
        const pending = this.pendingPair;
        if (pending) {
            pending.target = pixel;
        }
        else {
            this.pairs.push({ handle: pixel, target: null });
        }
        return true;
    }
    deletePair(index) {
        if (index >= 0 && index < this.pairs.length)
            this.pairs.splice(index, 1);
    }
    /** Nearest marker within radius (image px); used by drag-reposition. */
    hitTest(pixel, radius = 3) {
        let best = null;
        let bestDist = radius + 1e-9;
        this.pairs.forEach((p, i) => {
            const candidates = [
                ["handle", p.handle],
                ["target", p.target],
            ];
            for (const [kind, point] of candidates) {
                if (!point)
                    continue;
                const d = Math.hypot(point[0] - pixel[0], point[1] - pixel[1]);
                if (d < bestDist) {
                    bestDist = d;
                    best = { pair: i, kind };
                }
            }
        });
        return best;
    }
    movePoint(hit, pixel) {
        const pair = this.pairs[hit.pair];
        if (!pair)
            return;
        if (hit.kind === "handle")
            pair.handle = pixel;
        else
            pair.target = pixel;
    }
    /** Stamp a filled disc of editable pixels around an image point. */
    paintMask(center, erase = false) {
        const r = this.brushRadius;
        this.maskPainted = true;
        for (let dr = -r; dr <= r; dr++) {
            for (let dc = -r; dc <= r; dc++) {
                if (dr * dr + dc * dc > r * r)
                    continue;
                const row = center[0] + dr;
                const col = center[1] + dc;
                if (row < 0 || col < 0 || row >= this.height || col >= this.width)
                    continue;
                this.mask[row * this.width + col] = erase ? 0 : 1;
            }
        }
    }
    clearMask() {
        this.mask.fill(0);
        this.maskPainted = false;
    }
    completePairs() {
        return this.pairs.filter((p) => p.target !== null);
    }
    /** The request exactly as drawn: complete pairs plus the painted mask
     * (or null when untouched, meaning fully editable). */
    serialize(prompts, weights, toggles, optimizer = {}) {
        const points = this.completePairs().map((p) => ({
            handle: [p.handle[0], p.handle[1]],
            target: [p.target[0], p.target[1]],
        }));
        if (points.length === 0)
            throw new Error("place at least one complete pair");
        return {
            points,
            mask: this.maskPainted ? encodeRle(this.mask, this.height, this.width) : null,
            prompt_initial: prompts.initial,
            prompt_target: prompts.target,
            weights,
            toggles,
            optimizer,
        };
    }
}
