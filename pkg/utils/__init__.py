"""Generation engine: schema, specs, sampling, LLM bridge, pipeline and metrics"""
