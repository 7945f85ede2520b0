/**
 * Zero-knowledge guard: the client refuses any server payload that carries
 * ground truth. This is enforced at runtime on every JSON body the API
 * client receives, so a server regression fails loudly in the UI instead of
 * silently leaking provenance to participants.
 */

const FORBIDDEN_KEYS = new Set([
  "truth",
  "fake_side",
  "generator",
  "provenance",
  "is_probe",
  "probe",
  "probes",
  "true_class",
  "class_label",
  "record_id",
  "answer_key",
]);

/** Values that would reveal what kind of stimulus the user is looking at. */
const FORBIDDEN_VALUE = /^(cgan|dm|phantom|real|fake)$/;

export function findLeak(payload: unknown, path = "$"): string | null {
  if (payload === null || payload === undefined) return null;
  if (Array.isArray(payload)) {
    for (let i = 0; i < payload.length; i++) {
      const leak = findLeak(payload[i], `${path}[${i}]`);
      if (leak) return leak;
    }
    return null;
  }
  if (typeof payload === "object") {
    for (const [key, value] of Object.entries(payload as Record<string, unknown>)) {
      if (FORBIDDEN_KEYS.has(key)) return `${path}.${key}`;
      // "answer"/"state" echoes of the user's own input are fine; any other
      // string matching a provenance word is treated as a leak
      if (
        typeof value === "string" &&
        FORBIDDEN_VALUE.test(value) &&
        key !== "answer" &&
        key !== "kind"
      ) {
        return `${path}.${key}=${value}`;
      }
      const leak = findLeak(value, `${path}.${key}`);
      if (leak) return leak;
    }
    return null;
  }
  return null;
}

export function assertZeroKnowledge(payload: unknown): void {
  const leak = findLeak(payload);
  if (leak) {
    throw new Error(`server payload leaks ground truth at ${leak}`);
  }
}
