/** Run-length mask strings: "HxW:run,run,..." of alternating zero/one runs
 * in row-major order, starting with zeros. Matches the service schema. */

export function encodeRle(mask: Uint8Array, height: number, width: number): string {
  if (mask.length !== height * width) {
    throw new Error(`mask length ${mask.length} != ${height}x${width}`);
  }
  const runs: number[] = [];
  let current = 0;
  let count = 0;
  for (const v of mask) {
    const bit = v ? 1 : 0;
    if (bit === current) {
      count += 1;
    } else {
      runs.push(count);
      current = bit;
      count = 1;
    }
  }
  runs.push(count);
  return `${height}x${width}:${runs.join(",")}`;
}

export function decodeRle(text: string): { mask: Uint8Array; height: number; width: number } {
  const m = text.match(/^(\d+)x(\d+):([\d,]*)$/);
  if (!m) throw new Error(`malformed run-length mask: ${text}`);
  const height = Number(m[1]);
  const width = Number(m[2]);
  const runs = m[3] === "" ? [] : m[3]!.split(",").map(Number);
  const total = runs.reduce((a, b) => a + b, 0);
  if (total !== height * width) {
    throw new Error(`runs sum to ${total}, grid needs ${height * width}`);
  }
  const mask = new Uint8Array(height * width);
  let value = 0;
  let pos = 0;
  for (const run of runs) {
    if (value) mask.fill(1, pos, pos + run);
    pos += run;
    value = 1 - value;
  }
  return { mask, height, width };
}
