// Inline validation mirroring the service, so a bad slider value is
// flagged before the command leaves the panel.  Bounds and message text
// must stay word-for-word equal to the service's range errors; the
// integration tests cross-check this against a live session.

export const VARIAC_RMS_RANGE: [number, number] = [0.0, 123.0];
export const CENTRAL_V_RANGE: [number, number] = [-300.0, 0.0];
export const ENDCAP_V_RANGE: [number, number] = [-500.0, 0.0];
export const SPEED_RANGE: [number, number] = [0.1, 100.0];
export const MAX_PARTICLES = 16;

// Python's "%g": six significant digits, trailing zeros trimmed,
// scientific notation with a two-digit exponent outside [1e-4, 1e6).
export function formatG(x: number): string {
  if (!isFinite(x)) return x > 0 ? "inf" : x < 0 ? "-inf" : "nan";
  if (x === 0) return "0";
  const exp = Math.floor(Math.log10(Math.abs(x)));
  if (exp < -4 || exp >= 6) {
    let mant = x / Math.pow(10, exp);
    let digits = mant.toPrecision(6).replace(/\.?0+$/, "");
    // rounding in toPrecision can carry the mantissa to 10
    if (Math.abs(parseFloat(digits)) >= 10) {
      return formatG(parseFloat(`${parseFloat(digits) / 10}e${exp + 1}`));
    }
    const sign = exp < 0 ? "-" : "+";
    const mag = Math.abs(exp).toString().padStart(2, "0");
    return `${digits}e${sign}${mag}`;
  }
  const fixed = x.toPrecision(6);
  if (fixed.includes("e") || fixed.includes("E")) {
    // toPrecision resorts to scientific sooner than %g does
    return formatG(parseFloat(fixed));
  }
  return fixed.includes(".") ? fixed.replace(/\.?0+$/, "") : fixed;
}

function rangeError(what: string, value: number,
                    [lo, hi]: [number, number]): string | null {
  if (value >= lo && value <= hi) return null;
  return `${what} ${formatG(value)} outside [${formatG(lo)}, ${formatG(hi)}]`;
}

export function checkVariacRms(v: number): string | null {
  return rangeError("Variac RMS (V)", v, VARIAC_RMS_RANGE);
}

export function checkCentralV(v: number): string | null {
  return rangeError("central DC (V)", v, CENTRAL_V_RANGE);
}

export function checkEndcapV(v: number): string | null {
  return rangeError("endcap DC (V)", v, ENDCAP_V_RANGE);
}

export function checkSpeed(v: number): string | null {
  return rangeError("real-time factor", v, SPEED_RANGE);
}

export function checkLoadCount(count: number, haveNow: number): string | null {
  if (!Number.isInteger(count)) return "count must be an integer";
  if (count < 1 || count > MAX_PARTICLES - haveNow) {
    return `count must leave the roster within ${MAX_PARTICLES} (have ${haveNow})`;
  }
  return null;
}

export function checkGammaRange(lo: number, hi: number): string | null {
  if (!(lo >= -2e-2 && lo < hi && hi < 0)) {
    return "gamma_range must satisfy -2e-2 <= lo < hi < 0 C/kg";
  }
  return null;
}
