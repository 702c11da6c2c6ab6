export * from "./wire.js";
export * from "./frames.js";
export * from "./session.js";
export * from "./evaluator.js";
