// Small text statistics helpers.

const SEPARATOR = /\s+/;

function words(text) {
  return text.split(SEPARATOR).filter((w) => w.length > 0);
}

function wordCount(text) {
  return words(text).length;
}

function mean(values) {
  if (values.length === 0) {
    throw new Error("mean of empty list");
  }
  return values.reduce((a, b) => a + b, 0) / values.length;
}

function longestWord(text) {
  let best = "";
  for (const w of words(text)) {
    if (w.length > best.length) {
      best = w;
    }
  }
  return best;
}

module.exports = { words, wordCount, mean, longestWord };
