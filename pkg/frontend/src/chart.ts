/** Minimal polyline chart on a 2d canvas: one panel, several series. */

export interface Series {
  label: string;
  color: string;
  values: Array<number | null>;
}

export function drawChart(
  canvas: HTMLCanvasElement,
  series: Series[],
  options: { logScale?: boolean } = {}
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#16161e";
  ctx.fillRect(0, 0, width, height);

  const points = series.flatMap((s) =>
    s.values.filter((v): v is number => v !== null && isFinite(v))
  );
  if (points.length === 0) return;
  const transform = (v: number) => (options.logScale ? Math.log10(Math.max(v, 1e-12)) : v);
  const lo = Math.min(...points.map(transform));
  const hi = Math.max(...points.map(transform));
  const span = hi - lo || 1;
  const n = Math.max(...series.map((s) => s.values.length));
  const px = (i: number) => 8 + (i / Math.max(n - 1, 1)) * (width - 16);
  const py = (v: number) => height - 8 - ((transform(v) - lo) / span) * (height - 16);

  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    let pen = false;
    s.values.forEach((v, i) => {
      if (v === null || !isFinite(v)) {
        pen = false;
        return;
      }
      if (!pen) {
        ctx.moveTo(px(i), py(v));
        pen = true;
      } else {
        ctx.lineTo(px(i), py(v));
      }
    });
    ctx.stroke();
  }

  let legendX = 10;
  ctx.font = "11px system-ui, sans-serif";
  for (const s of series) {
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, legendX, 14);
    legendX += ctx.measureText(s.label).width + 14;
  }
}
