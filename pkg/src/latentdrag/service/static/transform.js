/** Zoom/pan mapping between screen space and image pixels.
 *
 * screen = origin + scale * image, so a screen point maps back to the
 * image pixel under the cursor via the exact affine inverse. Keeping the
 * inverse exact (floor of the inverse-mapped coordinate) is what makes a
 * serialized click equal the pixel the user saw highlighted at any zoom.
 */
export const identityTransform = { scale: 1, originX: 0, originY: 0 };
export function imageToScreen(t, row, col) {
    return { x: t.originX + t.scale * col, y: t.originY + t.scale * row };
}
/** Continuous image coordinates of a screen point (column = x, row = y). */
export function screenToImage(t, x, y) {
    return { row: (y - t.originY) / t.scale, col: (x - t.originX) / t.scale };
}
/** The integer pixel under a screen point, or null outside the image. */
export function pixelFromClick(t, x, y, height, width) {
    const { row, col } = screenToImage(t, x, y);
    const r = Math.floor(row);
    const c = Math.floor(col);
    if (r < 0 || c < 0 || r >= height || c >= width)
        return null;
    return [r, c];
}
export function zoomAt(t, x, y, factor) {
    const scale = Math.min(64, Math.max(0.125, t.scale * factor));
    const applied = scale / t.scale;
    return {
        scale,
        originX: x - (x - t.originX) * applied,
        originY: y - (y - t.originY) * applied,
    };
}
export function pan(t, dx, dy) {
    return { ...t, originX: t.originX + dx, originY: t.originY + dy };
}
