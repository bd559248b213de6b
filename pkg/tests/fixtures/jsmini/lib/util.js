const EPSILON = 1e-9;

function clamp(x, lo, hi) {
  return Math.min(hi, Math.max(lo, x));
}

module.exports = { EPSILON, clamp };
