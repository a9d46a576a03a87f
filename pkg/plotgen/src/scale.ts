/** Linear axis mapping with rounded tick positions. */

export interface LinearScale {
  domain: [number, number];
  range: [number, number];
  map(v: number): number;
  ticks(count?: number): number[];
}

export function extent(values: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (!Number.isFinite(v)) continue;
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (lo === Infinity) throw new Error("no finite values to scale");
  if (lo === hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  return [lo, hi];
}

function niceStep(span: number, count: number): number {
  const raw = span / Math.max(1, count);
  const mag = Math.pow(10, Math.floor(Math.log10(raw)));
  const norm = raw / mag;
  const step = norm >= 5 ? 10 : norm >= 2 ? 5 : norm >= 1 ? 2 : 1;
  return step * mag;
}

export function linear(domain: [number, number], range: [number, number]): LinearScale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const k = (r1 - r0) / (d1 - d0);
  return {
    domain,
    range,
    map: (v) => r0 + (v - d0) * k,
    ticks(count = 6) {
      const step = niceStep(d1 - d0, count);
      const start = Math.ceil(d0 / step) * step;
      const out: number[] = [];
      for (let v = start; v <= d1 + step * 1e-9; v += step) {
        out.push(Math.abs(v) < step * 1e-9 ? 0 : Number(v.toPrecision(12)));
      }
      return out;
    },
  };
}

export function formatTick(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1e4 || a < 1e-3) return v.toExponential(1);
  return String(Number(v.toPrecision(6)));
}
